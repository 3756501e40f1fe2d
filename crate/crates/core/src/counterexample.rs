//! Inductive construction of a sparse coefficient sequence whose normalized
//! conditional centering `|E_0 S_n(θ)|/√n` is pushed above a growing
//! threshold on each block `(n_{k-1}, n_k]`, uniformly over a frequency grid.
//!
//! Stage `k` picks
//!
//! * `λ_k`, a high-probability bound on `|Σ_{1≤j<k} a_{n_j} e^{i n_j θ} ζ_{-n_j}(θ)|`;
//! * `a_{n_k} = c^{-k} / √n_{k-1}`;
//! * `n_k`, the smallest horizon at which a fresh rotated walk `W` satisfies
//!   `max_{n_{k-1} < n ≤ n_k} |W_n|/√n ≥ (λ_k + c^{k+1}) / a_{n_k}` with
//!   probability at least `1 - c^{-(k+1)}` on every grid point.
//!
//! The growth base `c` is 2 in the classical argument. Probabilities are Monte
//! Carlo estimates, compared through one-sided Wilson lower bounds.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::innovations::{draw_past, FrozenPast, InnovationLaw, InnovationStream, SeedSpec};
use crate::linear_process::{Block, CoefficientSeq, ThetaGrid};
use crate::phase::Rotor;
use crate::quenched::{conditional_dft, ProjectionPath, ZetaLadder};

/// How `λ_k` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Sure bound `Σ_{1≤j<k} a_{n_j} (n_j + 1) · sup|ξ|`; needs a bounded law.
    Deterministic,
    /// Inflated empirical quantile of the grid maximum.
    McQuantile,
}

impl LambdaMode {
    pub fn default_for(law: InnovationLaw) -> Self {
        match law.bound() {
            Some(_) => LambdaMode::Deterministic,
            None => LambdaMode::McQuantile,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub k_max: usize,
    pub grid: ThetaGrid,
    /// Growth base `c > 1` of the thresholds `c^k`.
    pub base: f64,
    pub law: InnovationLaw,
    pub lambda_mode: LambdaMode,
    /// Walks simulated per probe of `n_k`.
    pub probe_replicates: usize,
    /// Pasts sampled for the quantile mode of `λ_k`.
    pub lambda_replicates: usize,
    /// `c₁` in the success target `1 - c₁ c^{-(k+1)}`.
    pub success_slack: f64,
    /// `c₂` in the tail target `c₂ c^{-(k+2)}`.
    pub tail_slack: f64,
    /// Largest `n_k` the search may probe.
    pub max_horizon: usize,
    /// One-sided normal quantile used for the Wilson bounds.
    pub confidence_z: f64,
    /// Multiplier applied to the empirical quantile in [`LambdaMode::McQuantile`].
    pub quantile_safety: f64,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        Self {
            k_max: 3,
            grid: ThetaGrid::equispaced(64).expect("valid grid"),
            base: 1.3,
            law: InnovationLaw::Rademacher,
            lambda_mode: LambdaMode::Deterministic,
            probe_replicates: 200,
            lambda_replicates: 2000,
            success_slack: 1.0,
            tail_slack: 1.0,
            max_horizon: 1 << 20,
            confidence_z: 1.645,
            quantile_safety: 1.1,
        }
    }
}

impl ConstructionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !self.base.is_finite() || self.base <= 1.0 {
            return bad("growth base must be a finite number > 1");
        }
        if self.grid.is_empty() {
            return bad("theta grid must be nonempty");
        }
        if self.probe_replicates == 0 || self.lambda_replicates == 0 {
            return bad("replicate counts must be positive");
        }
        if self.max_horizon < 2 {
            return bad("max_horizon must be at least 2");
        }
        if self.lambda_mode == LambdaMode::Deterministic && self.law.bound().is_none() {
            return bad("deterministic lambda needs a bounded innovation law");
        }
        Ok(())
    }

    /// `a_{n_k} = c^{-k}/√n_{k-1}`.
    pub fn coefficient(&self, k: usize, n_prev: usize) -> f64 {
        self.base.powi(-(k as i32)) / (n_prev as f64).sqrt()
    }

    pub fn threshold(&self, k: usize, lambda: f64, coefficient: f64) -> f64 {
        (lambda + self.base.powi(k as i32 + 1)) / coefficient
    }

    pub fn success_target(&self, k: usize) -> f64 {
        1.0 - self.success_slack * self.base.powi(-(k as i32 + 1))
    }

    pub fn tail_target(&self, k: usize) -> f64 {
        self.tail_slack * self.base.powi(-(k as i32 + 2))
    }
}

/// One-sided Wilson lower confidence bound for a binomial proportion.
pub fn wilson_lower(successes: usize, trials: usize, z: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let m = trials as f64;
    let p = successes as f64 / m;
    let z2 = z * z;
    let center = p + z2 / (2.0 * m);
    let margin = z * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
    ((center - margin) / (1.0 + z2 / m)).max(0.0)
}

/// Blocks `1 ≤ j < k` of a block-structured sequence.
fn prior_blocks(coeffs: &CoefficientSeq, k: usize) -> Vec<Block> {
    coeffs
        .blocks()
        .iter()
        .filter(|b| b.k >= 1 && b.k < k)
        .copied()
        .collect()
}

/// `Σ_{1≤j<k} a_{n_j} (n_j + 1) · bound`.
pub fn deterministic_lambda(coeffs: &CoefficientSeq, k: usize, bound: f64) -> f64 {
    prior_blocks(coeffs, k)
        .iter()
        .map(|b| b.a.abs() * (b.n_k + 1) as f64 * bound)
        .sum()
}

/// Choose `λ_k` so that `|Σ_{1≤j<k} a_{n_j} e^{i n_j θ} ζ_{-n_j}(θ)| > λ_k` has
/// probability at most the stage tail target on every grid point.
pub fn choose_lambda(k: usize, coeffs: &CoefficientSeq, params: &ConstructionParams, master: u64) -> Result<f64> {
    let prior = prior_blocks(coeffs, k);
    if prior.is_empty() {
        return Ok(0.0);
    }
    let sure_bound = params.law.bound().map(|b| deterministic_lambda(coeffs, k, b));
    match params.lambda_mode {
        LambdaMode::Deterministic => sure_bound
            .ok_or_else(|| Error::InvalidArgument("deterministic lambda needs a bounded innovation law".into())),
        LambdaMode::McQuantile => {
            let depth = prior.iter().map(|b| b.n_k).max().unwrap_or(0);
            let grid = &params.grid;
            let mut stats: Vec<f64> = (0..params.lambda_replicates)
                .into_par_iter()
                .map(|r| {
                    let past = draw_past(params.law, depth, &SeedSpec::new(master, "lambda", r as u64, k as u64));
                    let mut ladder = ZetaLadder::with_checkpoints(grid.clone(), prior.iter().map(|b| b.n_k));
                    for &xi in past.values() {
                        ladder.extend(xi);
                    }
                    grid.points()
                        .iter()
                        .enumerate()
                        .map(|(t, &theta)| {
                            prior
                                .iter()
                                .map(|b| {
                                    let zeta = ladder.checkpoint(b.n_k).expect("checkpoint")[t];
                                    b.a * Complex64::from_polar(1.0, b.n_k as f64 * theta) * zeta
                                })
                                .sum::<Complex64>()
                                .norm()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            stats.sort_by(f64::total_cmp);
            let level = 1.0 - params.tail_target(k);
            let idx = ((level * stats.len() as f64).ceil() as usize).clamp(1, stats.len()) - 1;
            let lambda = stats[idx] * params.quantile_safety;
            Ok(match sure_bound {
                Some(b) => lambda.min(b),
                None => lambda,
            })
        }
    }
}

/// Per-frequency outcome of an `n_k` search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaProbe {
    pub theta: f64,
    /// Smallest horizon passing at this frequency alone, if any was found.
    pub min_n: Option<usize>,
    /// Point estimate of the success probability at the chosen horizon.
    pub probability: f64,
    pub lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSearch {
    pub n: usize,
    pub threshold: f64,
    pub target: f64,
    pub horizon_probed: usize,
    pub probes: Vec<ThetaProbe>,
}

impl NSearch {
    pub fn worst(&self) -> &ThetaProbe {
        self.probes
            .iter()
            .min_by(|a, b| a.lower_bound.total_cmp(&b.lower_bound))
            .expect("nonempty grid")
    }
}

const NO_PASSAGE: usize = usize::MAX;

/// One replicate of the rotated walks `W_n(θ) = Σ_{m<n} e^{-imθ} η_m` on
/// every grid point, all driven by the same innovations.
struct ReplicateWalk {
    stream: InnovationStream,
    steps: usize,
    pending: Vec<usize>,
    rotors: Vec<Rotor>,
    walk: Vec<Complex64>,
    passage: Vec<usize>,
}

impl ReplicateWalk {
    fn new(thetas: &[f64], stream: InnovationStream) -> Self {
        Self {
            stream,
            steps: 0,
            pending: (0..thetas.len()).collect(),
            rotors: thetas.iter().map(|&t| Rotor::new(-t)).collect(),
            walk: vec![Complex64::new(0.0, 0.0); thetas.len()],
            passage: vec![NO_PASSAGE; thetas.len()],
        }
    }

    /// Advance to length `horizon`, recording the first `n > floor` with
    /// `|W_n|² ≥ τ² n`.
    fn extend_to(&mut self, horizon: usize, floor: usize, tau_sq: f64) {
        while self.steps < horizon && !self.pending.is_empty() {
            let eta = self.stream.next_value();
            self.steps += 1;
            let n = self.steps;
            let level = tau_sq * n as f64;
            let mut i = 0;
            while i < self.pending.len() {
                let t = self.pending[i];
                let w = &mut self.walk[t];
                *w += self.rotors[t].current() * eta;
                self.rotors[t].advance();
                if n > floor && w.norm_sqr() >= level {
                    self.passage[t] = n;
                    self.pending.swap_remove(i);
                } else {
                    i += 1;
                }
            }
        }
    }
}

/// Search for `n_k` by doubling the horizon, then bisecting on the recorded
/// first-passage times.
#[allow(clippy::too_many_arguments)]
pub fn choose_n(
    k: usize,
    lambda: f64,
    n_prev: usize,
    coefficient: f64,
    params: &ConstructionParams,
    master: u64,
) -> Result<NSearch> {
    let threshold = params.threshold(k, lambda, coefficient);
    let target = params.success_target(k);
    search_horizon(k, threshold, target, n_prev, params, master)
}

/// Smallest `N > floor` such that, on every grid point, the Wilson lower bound
/// of `P(max_{floor<n≤N} |W_n|/√n ≥ threshold)` reaches `target`.
pub fn search_horizon(
    stage: usize,
    threshold: f64,
    target: f64,
    floor: usize,
    params: &ConstructionParams,
    master: u64,
) -> Result<NSearch> {
    let thetas = params.grid.points();
    if threshold <= 0.0 || target <= 0.0 {
        let n = floor + 1;
        return Ok(NSearch {
            n,
            threshold,
            target,
            horizon_probed: n,
            probes: thetas
                .iter()
                .map(|&theta| ThetaProbe {
                    theta,
                    min_n: Some(n),
                    probability: 1.0,
                    lower_bound: 1.0,
                })
                .collect(),
        });
    }
    let m = params.probe_replicates;
    let z = params.confidence_z;
    let tau_sq = threshold * threshold;
    let mut walks: Vec<ReplicateWalk> = (0..m)
        .map(|r| {
            let seed = SeedSpec::new(master, "probe", r as u64, stage as u64);
            ReplicateWalk::new(thetas, seed.stream(params.law))
        })
        .collect();

    // passages[t] sorted first-passage times at frequency t
    let passages = |walks: &[ReplicateWalk]| -> Vec<Vec<usize>> {
        (0..thetas.len())
            .map(|t| {
                let mut p: Vec<usize> = walks.iter().map(|w| w.passage[t]).collect();
                p.sort_unstable();
                p
            })
            .collect()
    };
    let count_le = |sorted: &[usize], n: usize| sorted.partition_point(|&p| p <= n);
    let passes = |sorted: &[Vec<usize>], n: usize| sorted.iter().all(|p| wilson_lower(count_le(p, n), m, z) >= target);

    let mut lo = floor;
    let mut hi = (2 * floor).max(floor + 1).min(params.max_horizon.max(floor + 1));
    loop {
        walks.par_iter_mut().for_each(|w| w.extend_to(hi, floor, tau_sq));
        let sorted = passages(&walks);
        if passes(&sorted, hi) {
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if passes(&sorted, mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let horizon_probed = walks.iter().map(|w| w.steps).max().unwrap_or(hi);
            let probes = thetas
                .iter()
                .zip(&sorted)
                .map(|(&theta, p)| {
                    let c = count_le(p, hi);
                    // the c-th smallest passage is the first horizon reaching c successes
                    let min_n = (1..=m)
                        .find(|&c| wilson_lower(c, m, z) >= target)
                        .map(|c| p[c - 1])
                        .filter(|&n| n != NO_PASSAGE);
                    ThetaProbe {
                        theta,
                        min_n,
                        probability: c as f64 / m as f64,
                        lower_bound: wilson_lower(c, m, z),
                    }
                })
                .collect();
            return Ok(NSearch {
                n: hi,
                threshold,
                target,
                horizon_probed,
                probes,
            });
        }
        if hi >= params.max_horizon {
            let (worst_t, worst_lb) = sorted
                .iter()
                .enumerate()
                .map(|(t, p)| (t, wilson_lower(count_le(p, hi), m, z)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("nonempty grid");
            return Err(Error::SearchBudgetExhausted {
                stage,
                largest_n: hi,
                worst_theta: thetas[worst_t],
                worst_lower_bound: worst_lb,
                target,
                threshold,
            });
        }
        lo = hi;
        hi = (hi * 2).min(params.max_horizon);
    }
}

/// Per-stage entry of the construction log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub lambda: f64,
    pub n_k: usize,
    pub a: f64,
    pub threshold: Option<f64>,
    pub success_target: Option<f64>,
    /// Smallest per-frequency point estimate of the success probability at `n_k`.
    pub success_probability: Option<f64>,
    pub success_lower_bound: Option<f64>,
    pub worst_theta: Option<f64>,
    pub probe_replicates: usize,
    pub horizon_probed: usize,
    /// Not serialized: artifacts stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildStatus {
    Complete,
    BudgetExhausted,
}

/// The stage at which a search ran out of budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedStage {
    pub k: usize,
    pub lambda: f64,
    pub a: f64,
    pub threshold: f64,
    pub target: f64,
    pub largest_n: usize,
    pub worst_theta: f64,
    pub worst_lower_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLog {
    pub base: f64,
    pub law: InnovationLaw,
    pub lambda_mode: LambdaMode,
    pub k_max: usize,
    pub grid_size: usize,
    pub status: BuildStatus,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<FailedStage>,
    /// Upper bound on `Σ_{j>K} a_{n_j}²` for the stages a longer run would add.
    pub tail_l2_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Construction {
    pub coeffs: CoefficientSeq,
    pub log: ConstructionLog,
}

/// A build that stopped early; `partial` holds every completed stage.
#[derive(Debug)]
pub struct BuildFailure {
    pub partial: Construction,
    pub error: Error,
}

fn tail_l2_bound(base: f64, k_last: usize, n_last: usize) -> f64 {
    // Σ_{j>K} c^{-2j}/n_{j-1} ≤ c^{-2(K+1)} / ((1 - c^{-2}) n_K)
    base.powi(-2 * (k_last as i32 + 1)) / ((1.0 - base.powi(-2)) * n_last as f64)
}

fn assemble(blocks: &[Block]) -> CoefficientSeq {
    CoefficientSeq::new(
        blocks.iter().map(|b| b.n_k).collect(),
        blocks.iter().map(|b| b.a).collect(),
    )
    .and_then(|c| c.with_blocks(blocks.to_vec()))
    .expect("blocks are strictly increasing with nonzero values")
}

/// Run the inductive construction up to `params.k_max` stages.
///
/// Stage 0 is `n_0 = 1`, `a_1 = 1/2`, `λ_0 = 0`.
pub fn build(params: &ConstructionParams, master: u64) -> std::result::Result<Construction, Box<BuildFailure>> {
    let mut blocks = vec![Block { k: 0, n_k: 1, a: 0.5 }];
    let mut log = ConstructionLog {
        base: params.base,
        law: params.law,
        lambda_mode: params.lambda_mode,
        k_max: params.k_max,
        grid_size: params.grid.len(),
        status: BuildStatus::Complete,
        stages: vec![StageRecord {
            k: 0,
            lambda: 0.0,
            n_k: 1,
            a: 0.5,
            threshold: None,
            success_target: None,
            success_probability: None,
            success_lower_bound: None,
            worst_theta: None,
            probe_replicates: 0,
            horizon_probed: 0,
            wall_clock: Duration::ZERO,
        }],
        failed_stage: None,
        tail_l2_bound: tail_l2_bound(params.base, 0, 1),
    };
    let fail = |blocks: &[Block], mut log: ConstructionLog, error: Error| {
        log.status = BuildStatus::BudgetExhausted;
        Box::new(BuildFailure {
            partial: Construction {
                coeffs: assemble(blocks),
                log,
            },
            error,
        })
    };
    if let Err(e) = params.validate() {
        return Err(fail(&blocks, log, e));
    }

    for k in 1..=params.k_max {
        let started = Instant::now();
        let n_prev = blocks.last().expect("stage 0").n_k;
        let coeffs = assemble(&blocks);
        let lambda = match choose_lambda(k, &coeffs, params, master) {
            Ok(l) => l,
            Err(e) => return Err(fail(&blocks, log, e)),
        };
        let a = params.coefficient(k, n_prev);
        match choose_n(k, lambda, n_prev, a, params, master) {
            Ok(search) => {
                let worst = search.worst();
                log.stages.push(StageRecord {
                    k,
                    lambda,
                    n_k: search.n,
                    a,
                    threshold: Some(search.threshold),
                    success_target: Some(search.target),
                    success_probability: Some(
                        search
                            .probes
                            .iter()
                            .map(|p| p.probability)
                            .fold(f64::INFINITY, f64::min),
                    ),
                    success_lower_bound: Some(worst.lower_bound),
                    worst_theta: Some(worst.theta),
                    probe_replicates: params.probe_replicates,
                    horizon_probed: search.horizon_probed,
                    wall_clock: started.elapsed(),
                });
                blocks.push(Block { k, n_k: search.n, a });
                log.tail_l2_bound = tail_l2_bound(params.base, k, search.n);
            }
            Err(error) => {
                if let Error::SearchBudgetExhausted {
                    largest_n,
                    worst_theta,
                    worst_lower_bound,
                    target,
                    threshold,
                    ..
                } = &error
                {
                    log.failed_stage = Some(FailedStage {
                        k,
                        lambda,
                        a,
                        threshold: *threshold,
                        target: *target,
                        largest_n: *largest_n,
                        worst_theta: *worst_theta,
                        worst_lower_bound: *worst_lower_bound,
                    });
                }
                return Err(fail(&blocks, log, error));
            }
        }
    }
    Ok(Construction {
        coeffs: assemble(&blocks),
        log,
    })
}

/// `(n_{k-1}, n_k)` of a block-structured sequence.
pub fn block_range(coeffs: &CoefficientSeq, k: usize) -> Result<(usize, usize)> {
    if k == 0 {
        return Err(Error::InvalidArgument("block ranges start at stage 1".into()));
    }
    let prev = coeffs.block(k - 1);
    let cur = coeffs.block(k);
    match (prev, cur) {
        (Some(p), Some(c)) => Ok((p.n_k, c.n_k)),
        _ => Err(Error::InvalidArgument(format!(
            "stage {k} is not recorded in the sequence"
        ))),
    }
}

/// `E_0 S_n(θ) = A_k(n, θ) + B_k(n, θ)`: the head sums blocks `j ≤ k`, the
/// tail blocks `j > k`. Returns `(A_k, B_k, E_0 S_n)`.
pub fn projection_decomposition(
    coeffs: &CoefficientSeq,
    past: &FrozenPast,
    k: usize,
    n: usize,
    theta: f64,
) -> Result<(Complex64, Complex64, Complex64)> {
    let cut = coeffs
        .block(k)
        .ok_or_else(|| Error::InvalidArgument(format!("stage {k} is not recorded in the sequence")))?
        .n_k;
    let path = ProjectionPath::new(coeffs, past, theta)?;
    let (head, tail) = path.split(n, cut);
    Ok((head, tail, conditional_dft(coeffs, past, n, theta)?))
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / m).sqrt(),
        }
    }

    /// `mean ≤ bound + 3·std_error`.
    pub fn respects(&self, bound: f64) -> bool {
        self.mean <= bound + 3.0 * self.std_error
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BkThetaStat {
    pub theta: f64,
    /// `E max_{n_{k-1}<n≤n_k} |B_k(n, θ)|`.
    pub expected_max: Estimate,
    /// `P(max |B_k| ≥ c^k)`.
    pub tail_probability: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BkReport {
    pub k: usize,
    pub base: f64,
    pub replicates: usize,
    /// Only the recorded stages beyond `k` enter the tail.
    pub truncated: bool,
    pub tail_stages: usize,
    pub level: f64,
    /// `2 c^{-k}/(c-1)`; equals `2^{1-k}` for `c = 2`.
    pub expectation_bound: f64,
    /// `expectation_bound / c^k`; equals `2^{1-2k}` for `c = 2`.
    pub tail_bound: f64,
    /// `2 Σ_{j>k} a_{n_j} √(n_k - n_{k-1})` for the recorded tail.
    pub sequence_expectation_bound: f64,
    /// `c^{-(k+2)}`.
    pub tail_target: f64,
    pub per_theta: Vec<BkThetaStat>,
}

impl BkReport {
    pub fn respects_bounds(&self) -> bool {
        self.per_theta
            .iter()
            .all(|s| s.expected_max.respects(self.expectation_bound) && s.tail_probability.respects(self.tail_bound))
    }

    pub fn meets_tail_target(&self) -> bool {
        self.per_theta
            .iter()
            .all(|s| s.tail_probability.respects(self.tail_target))
    }
}

/// Monte Carlo estimate of the tail term `B_k` over fresh pasts.
pub fn bound_bk(
    coeffs: &CoefficientSeq,
    base: f64,
    k: usize,
    grid: &ThetaGrid,
    law: InnovationLaw,
    replicates: usize,
    master: u64,
) -> Result<BkReport> {
    let (lo, hi) = block_range(coeffs, k)?;
    let tail: Vec<&Block> = coeffs.blocks().iter().filter(|b| b.k > k).collect();
    let level = base.powi(k as i32);
    let expectation_bound = 2.0 * base.powi(-(k as i32)) / (base - 1.0);
    let sequence_expectation_bound = 2.0 * tail.iter().map(|b| b.a.abs()).sum::<f64>() * ((hi - lo) as f64).sqrt();
    let depth = coeffs.max_index().unwrap_or(0);

    let maxima: Vec<Vec<f64>> = if tail.is_empty() {
        vec![vec![0.0; grid.len()]; replicates]
    } else {
        (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let past = draw_past(law, depth, &SeedSpec::new(master, "bk", r as u64, k as u64));
                let mut path = ProjectionPath::new(&CoefficientSeq::zero(), &past, 0.0)?;
                grid.points()
                    .iter()
                    .map(|&theta| {
                        path.reset(coeffs, &past, theta)?;
                        Ok(((lo + 1)..=hi).map(|n| path.split(n, hi).1.norm()).fold(0.0, f64::max))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    };

    let per_theta = grid
        .points()
        .iter()
        .enumerate()
        .map(|(t, &theta)| {
            let xs: Vec<f64> = maxima.iter().map(|row| row[t]).collect();
            let hits: Vec<f64> = xs.iter().map(|&x| if x >= level { 1.0 } else { 0.0 }).collect();
            BkThetaStat {
                theta,
                expected_max: Estimate::from_samples(&xs),
                tail_probability: Estimate::from_samples(&hits),
            }
        })
        .collect();
    Ok(BkReport {
        k,
        base,
        replicates,
        truncated: true,
        tail_stages: tail.len(),
        level,
        expectation_bound,
        tail_bound: expectation_bound / level,
        sequence_expectation_bound,
        tail_target: base.powi(-(k as i32 + 2)),
        per_theta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoobReport {
    pub theta: f64,
    pub n: usize,
    pub replicates: usize,
    /// `E max_{m≤n} |ζ_{-m}(θ)|`.
    pub expected_max: Estimate,
    /// `2√n`.
    pub bound: f64,
    pub pass: bool,
}

/// Maximal-inequality check on the backward walk of the identity filter.
pub fn doob_check(
    thetas: &[f64],
    n: usize,
    law: InnovationLaw,
    replicates: usize,
    master: u64,
) -> Result<Vec<DoobReport>> {
    let grid = ThetaGrid::from_points(thetas.iter().copied())?;
    let maxima: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let past = draw_past(law, n, &SeedSpec::new(master, "doob", r as u64, 0));
            let mut ladder = ZetaLadder::new(grid.clone());
            let mut best = vec![0.0f64; grid.len()];
            for &xi in past.values() {
                ladder.extend(xi);
                for (b, z) in best.iter_mut().zip(ladder.values()) {
                    *b = b.max(z.norm());
                }
            }
            best
        })
        .collect();
    let bound = 2.0 * (n as f64).sqrt();
    Ok(grid
        .points()
        .iter()
        .enumerate()
        .map(|(t, &theta)| {
            let xs: Vec<f64> = maxima.iter().map(|row| row[t]).collect();
            let expected_max = Estimate::from_samples(&xs);
            DoobReport {
                theta,
                n,
                replicates,
                expected_max,
                bound,
                pass: expected_max.respects(bound),
            }
        })
        .collect())
}

/// `max_{lo<n≤hi} |E_0 S_n(θ)|/√n` for one past and frequency.
pub fn block_maximum(path: &ProjectionPath, lo: usize, hi: usize) -> f64 {
    ((lo + 1)..=hi)
        .map(|n| path.at(n).norm() / (n as f64).sqrt())
        .fold(0.0, f64::max)
}

/// Running maxima `max_{n ≤ n_k} |E_0 S_n(θ)|/√n` over fresh pasts, for
/// each requested block. Indexed `[past][θ][block]`.
pub fn block_maxima(
    coeffs: &CoefficientSeq,
    ranges: &[(usize, usize)],
    grid: &ThetaGrid,
    law: InnovationLaw,
    replicates: usize,
    master: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let depth = coeffs.max_index().unwrap_or(0);
    (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<f64>>> {
            let past = draw_past(law, depth, &SeedSpec::new(master, "verify", r as u64, 0));
            let mut path = ProjectionPath::new(&CoefficientSeq::zero(), &past, 0.0)?;
            grid.points()
                .iter()
                .map(|&theta| {
                    path.reset(coeffs, &past, theta)?;
                    Ok(ranges.iter().map(|&(lo, hi)| block_maximum(&path, lo, hi)).collect())
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub theta: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub k: usize,
    pub level: f64,
    /// `1 - c^{-(k+1)}`.
    pub nominal_target: f64,
    /// `1 - 2 c^{-(k+1)}`; the frequency every grid point must reach.
    pub required_frequency: f64,
    pub replicates: usize,
    pub rows: Vec<StageRow>,
}

impl StageReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.frequency >= self.required_frequency)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub reports: Vec<StageReport>,
    /// Running maximum of `|E_0 S_n(θ)|/√n` up to each verified `n_k`,
    /// indexed `[past][θ][stage]`.
    pub running_max: Vec<Vec<Vec<f64>>>,
}

/// Empirical frequency, over fresh pasts, of
/// `max_{n_{k-1}<n≤n_k} |E_0 S_n(θ)|/√n ≥ c^k` for each requested stage.
pub fn verify_stages(
    coeffs: &CoefficientSeq,
    base: f64,
    stages: &[usize],
    grid: &ThetaGrid,
    law: InnovationLaw,
    replicates: usize,
    master: u64,
) -> Result<VerifyOutcome> {
    let mut stages = stages.to_vec();
    stages.sort_unstable();
    stages.dedup();
    let ranges = stages
        .iter()
        .map(|&k| block_range(coeffs, k))
        .collect::<Result<Vec<_>>>()?;
    let maxima = block_maxima(coeffs, &ranges, grid, law, replicates, master)?;

    let reports = stages
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            let level = base.powi(k as i32);
            let rows = grid
                .points()
                .iter()
                .enumerate()
                .map(|(t, &theta)| {
                    let hits = maxima.iter().filter(|past| past[t][s] >= level).count();
                    StageRow {
                        theta,
                        frequency: hits as f64 / replicates as f64,
                    }
                })
                .collect();
            StageReport {
                k,
                level,
                nominal_target: 1.0 - base.powi(-(k as i32 + 1)),
                required_frequency: 1.0 - 2.0 * base.powi(-(k as i32 + 1)),
                replicates,
                rows,
            }
        })
        .collect();

    let running_max = maxima
        .into_iter()
        .map(|past| {
            past.into_iter()
                .map(|per_stage| {
                    let mut acc = 0.0f64;
                    per_stage
                        .into_iter()
                        .map(|m| {
                            acc = acc.max(m);
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(VerifyOutcome { reports, running_max })
}

pub fn verify_stage(
    coeffs: &CoefficientSeq,
    base: f64,
    k: usize,
    grid: &ThetaGrid,
    law: InnovationLaw,
    replicates: usize,
    master: u64,
) -> Result<StageReport> {
    Ok(verify_stages(coeffs, base, &[k], grid, law, replicates, master)?
        .reports
        .remove(0))
}

//! Quenched (past-frozen) analysis of `S_n(θ)`.
//!
//! With the past `ξ_0, ξ_{-1}, …` frozen, `E_0 S_n(θ)` is a deterministic
//! function of the past. It is evaluated through the rotated backward walk
//! `ζ_{-k}(θ) = Σ_{j≤k} e^{-ijθ} ξ_{-j}` and cross-checked against the
//! partial-sum form `Σ_{j≤0} ξ_j (f_{n-j} - f_{-j})(θ) e^{ijθ}`.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::innovations::{draw_future, FrozenPast, InnovationLaw, SeedSpec};
use crate::linear_process::{
    agree, f_partial, transfer_fn, CoefficientSeq, ComplexSample, InnovationWindow, ThetaGrid,
};
use crate::phase::{canonical_angle, cis, Rotor};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Incrementally maintained `ζ_{-k}(θ)` over a frequency grid.
#[derive(Clone, Debug)]
pub struct ZetaLadder {
    grid: ThetaGrid,
    depth: Option<usize>,
    values: Vec<Complex64>,
    rotors: Vec<Rotor>,
    checkpoints: BTreeSet<usize>,
    history: BTreeMap<usize, Vec<Complex64>>,
}

impl ZetaLadder {
    pub fn new(grid: ThetaGrid) -> Self {
        Self::with_checkpoints(grid, [])
    }

    /// A ladder that keeps a copy of `ζ_{-m}` for every `m` in `checkpoints`.
    pub fn with_checkpoints(grid: ThetaGrid, checkpoints: impl IntoIterator<Item = usize>) -> Self {
        let rotors = grid.points().iter().map(|&t| Rotor::new(-t)).collect();
        Self {
            values: vec![ZERO; grid.len()],
            grid,
            depth: None,
            rotors,
            checkpoints: checkpoints.into_iter().collect(),
            history: BTreeMap::new(),
        }
    }

    pub fn from_past(grid: ThetaGrid, past: &FrozenPast) -> Self {
        let mut ladder = Self::new(grid);
        for &xi in past.values() {
            ladder.extend(xi);
        }
        ladder
    }

    /// Apply `ζ_{-k} = ζ_{-(k-1)} + e^{-ikθ} ξ_{-k}` on every grid point.
    pub fn extend(&mut self, xi: f64) {
        for (value, rotor) in self.values.iter_mut().zip(&mut self.rotors) {
            *value += rotor.current() * xi;
            rotor.advance();
        }
        let k = self.depth.map_or(0, |d| d + 1);
        self.depth = Some(k);
        if self.checkpoints.contains(&k) {
            self.history.insert(k, self.values.clone());
        }
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    /// Current `k`, or `None` before the first innovation.
    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    /// `ζ_{-k}(θ)` for every grid point at the current depth (zeros when empty).
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn checkpoint(&self, m: usize) -> Option<&[Complex64]> {
        self.history.get(&m).map(Vec::as_slice)
    }
}

/// Functional form of [`ZetaLadder::extend`].
pub fn zeta_extend(mut ladder: ZetaLadder, xi_next: f64) -> ZetaLadder {
    ladder.extend(xi_next);
    ladder
}

/// `ζ_0, ζ_{-1}, …, ζ_{-upto}` at a single frequency.
pub fn zeta_path(past: &FrozenPast, theta: f64, upto: usize) -> Vec<Complex64> {
    let mut rotor = Rotor::new(-canonical_angle(theta));
    let mut acc = ZERO;
    past.values()[..=upto]
        .iter()
        .map(|&xi| {
            acc += rotor.current() * xi;
            rotor.advance();
            acc
        })
        .collect()
}

/// Both closed forms of `E_0 S_n(θ)`: `(ζ-form, f-form)`.
pub fn conditional_dft_forms(
    coeffs: &CoefficientSeq,
    past: &FrozenPast,
    n: usize,
    theta: f64,
) -> Result<(ComplexSample, ComplexSample)> {
    let Some(max_index) = coeffs.max_index() else {
        return Ok((ZERO, ZERO));
    };
    past.ensure_depth(max_index)?;
    let theta = canonical_angle(theta);

    // ζ_{-m} by direct summation for m ≤ max_index.
    let mut zeta = Vec::with_capacity(max_index + 1);
    let mut acc = ZERO;
    for m in 0..=max_index {
        acc += cis(-(m as i64), theta) * past.get(m);
        zeta.push(acc);
    }
    let zeta_at = |m: i64| if m < 0 { ZERO } else { zeta[m as usize] };

    let by_zeta: Complex64 = coeffs
        .iter()
        .map(|(j, a)| {
            let j = j as i64;
            a * (zeta_at(j) - zeta_at(j - n as i64)) * cis(j, theta)
        })
        .sum();

    let mut by_partial_sums = ZERO;
    for m in 0..=max_index {
        let weight = f_partial(coeffs, (m + n) as i64, theta) - f_partial(coeffs, m as i64, theta);
        if weight != ZERO {
            by_partial_sums += past.get(m) * weight * cis(-(m as i64), theta);
        }
    }
    Ok((by_zeta, by_partial_sums))
}

/// `E_0 S_n(θ)` from the frozen past.
pub fn conditional_dft(coeffs: &CoefficientSeq, past: &FrozenPast, n: usize, theta: f64) -> Result<ComplexSample> {
    let (by_zeta, by_partial_sums) = conditional_dft_forms(coeffs, past, n, theta)?;
    if !agree(by_zeta, by_partial_sums) {
        return Err(Error::InternalMismatch {
            context: "conditional_dft",
            first: by_zeta,
            second: by_partial_sums,
        });
    }
    Ok(by_zeta)
}

/// `E_0 S_n(θ)` for many `n` at one `(past, θ)`.
///
/// Holds the full `ζ` path up to the largest support index, so each
/// evaluation costs one pass over the support.
#[derive(Clone, Debug)]
pub struct ProjectionPath {
    support: Vec<usize>,
    weights: Vec<Complex64>,
    zeta: Vec<Complex64>,
}

impl ProjectionPath {
    pub fn new(coeffs: &CoefficientSeq, past: &FrozenPast, theta: f64) -> Result<Self> {
        let mut path = Self {
            support: Vec::new(),
            weights: Vec::new(),
            zeta: Vec::new(),
        };
        path.reset(coeffs, past, theta)?;
        Ok(path)
    }

    /// Reuse the buffers for another `(past, θ)`.
    pub fn reset(&mut self, coeffs: &CoefficientSeq, past: &FrozenPast, theta: f64) -> Result<()> {
        let theta = canonical_angle(theta);
        self.support.clear();
        self.weights.clear();
        self.zeta.clear();
        let Some(max_index) = coeffs.max_index() else {
            return Ok(());
        };
        past.ensure_depth(max_index)?;
        self.support.extend_from_slice(coeffs.support());
        self.weights
            .extend(coeffs.iter().map(|(j, a)| a * cis(j as i64, theta)));
        let mut rotor = Rotor::new(-theta);
        let mut acc = ZERO;
        for &xi in &past.values()[..=max_index] {
            acc += rotor.current() * xi;
            rotor.advance();
            self.zeta.push(acc);
        }
        Ok(())
    }

    /// `ζ_{-m}(θ)` for `m` up to the largest support index.
    pub fn zeta(&self, m: usize) -> Complex64 {
        self.zeta[m]
    }

    /// Contribution to `E_0 S_n` of the support indices `j` selected by `keep`.
    #[inline]
    fn partial(&self, n: usize, mut keep: impl FnMut(usize) -> bool) -> Complex64 {
        let mut total = ZERO;
        for (&j, &w) in self.support.iter().zip(&self.weights) {
            if !keep(j) {
                continue;
            }
            let tail = if j >= n { self.zeta[j - n] } else { ZERO };
            total += w * (self.zeta[j] - tail);
        }
        total
    }

    /// `E_0 S_n(θ)`.
    #[inline]
    pub fn at(&self, n: usize) -> Complex64 {
        self.partial(n, |_| true)
    }

    /// `E_0 S_n(θ)` split into the contribution of support indices `≤ cut`
    /// and of those `> cut`.
    pub fn split(&self, n: usize, cut: usize) -> (Complex64, Complex64) {
        (self.partial(n, |j| j <= cut), self.partial(n, |j| j > cut))
    }
}

/// One frozen past with `M` resampled futures.
#[derive(Clone, Debug)]
pub struct QuenchedEnsemble {
    pub law: InnovationLaw,
    pub horizon: usize,
    pub grid: ThetaGrid,
    pub past: FrozenPast,
    /// `E_0 S_n(θ)` per grid point; identical for every replicate.
    pub conditional: Vec<ComplexSample>,
    /// `S_n`, `Y_n = (S_n - E_0 S_n)/√n` and `Z_n = S_n/√n`, indexed `[θ][replicate]`.
    pub s: Vec<Vec<ComplexSample>>,
    pub y: Vec<Vec<ComplexSample>>,
    pub z: Vec<Vec<ComplexSample>>,
}

impl QuenchedEnsemble {
    pub fn replicates(&self) -> usize {
        self.s.first().map_or(0, Vec::len)
    }
}

/// Draw `replicates` independent futures over one frozen past and record the
/// transform at horizon `n` on every grid point.
///
/// Replicate `r` uses the stream `(master, "future", r, n)`.
pub fn quenched_sample(
    coeffs: &CoefficientSeq,
    past: &FrozenPast,
    law: InnovationLaw,
    n: usize,
    grid: &ThetaGrid,
    replicates: usize,
    master: u64,
) -> Result<QuenchedEnsemble> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one replicate".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    past.ensure_depth(coeffs.max_index().unwrap_or(0))?;
    let conditional = grid
        .points()
        .iter()
        .map(|&t| conditional_dft(coeffs, past, n, t))
        .collect::<Result<Vec<_>>>()?;
    let phases: Vec<Vec<Complex64>> = grid
        .points()
        .iter()
        .map(|&t| (0..n as i64).map(|k| cis(k, t)).collect())
        .collect();

    let per_replicate: Vec<Vec<Complex64>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<Complex64>> {
            let future = draw_future(law, n, &SeedSpec::new(master, "future", r as u64, n as u64))?;
            let window = InnovationWindow::from_past_and_future(past, &future);
            let mut xs = vec![0.0; n];
            for (j, a) in coeffs.iter() {
                for (k, x) in xs.iter_mut().enumerate() {
                    *x += a * window.get(k as i64 - j as i64)?;
                }
            }
            Ok(phases
                .iter()
                .map(|ph| ph.iter().zip(&xs).map(|(p, x)| p * x).sum())
                .collect())
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / (n as f64).sqrt();
    let mut s = vec![Vec::with_capacity(replicates); grid.len()];
    let mut y = vec![Vec::with_capacity(replicates); grid.len()];
    let mut z = vec![Vec::with_capacity(replicates); grid.len()];
    for row in per_replicate {
        for (t, value) in row.into_iter().enumerate() {
            s[t].push(value);
            y[t].push((value - conditional[t]) * scale);
            z[t].push(value * scale);
        }
    }
    Ok(QuenchedEnsemble {
        law,
        horizon: n,
        grid: grid.clone(),
        past: past.clone(),
        conditional,
        s,
        y,
        z,
    })
}

/// Limiting variance `σ_θ² = |f(θ)|²/2` of each component of `Y_n(θ)`
/// (unit-variance innovations).
pub fn sigma_theta(coeffs: &CoefficientSeq, theta: f64) -> f64 {
    transfer_fn(coeffs, theta).norm_sqr() / 2.0
}

/// Finite-`n` form `(1/2n) Σ_{j=1}^{n-1} |f_j(θ)|²`, which equals
/// `E_0|S_n - E_0 S_n|² / 2n`.
pub fn sigma_theta_cesaro(coeffs: &CoefficientSeq, theta: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let theta = canonical_angle(theta);
    let mut f_j = ZERO;
    let mut next = coeffs.iter().peekable();
    let mut total = 0.0;
    for j in 1..n {
        // f_j adds the a_{j-1} term.
        while let Some(&(idx, a)) = next.peek() {
            if idx > j - 1 {
                break;
            }
            f_j += a * cis(idx as i64, theta);
            next.next();
        }
        total += f_j.norm_sqr();
    }
    total / (2.0 * n as f64)
}

/// Outcome of the finite-schedule convergence test on `E_0 S_n(θ)/√n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    ConvergesTo { re: f64, im: f64 },
    Diverges,
    Undecided,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::ConvergesTo { .. } => "converges",
            Verdict::Diverges => "diverges",
            Verdict::Undecided => "undecided",
        }
    }
}

/// `E_0 S_n(θ)/√n` at one schedule point, and the running maximum of its
/// modulus over every `n' ≤ n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: usize,
    pub value: Complex64,
    pub running_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitDiagnosis {
    pub verdict: Verdict,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Total width of the band the last points must share to count as converged.
pub const CONVERGENCE_BAND: f64 = 1e-2;
/// Number of trailing schedule points inspected for convergence.
pub const CONVERGENCE_WINDOW: usize = 5;
/// Growth factor of the running maximum over three doublings that counts as divergence.
pub const DIVERGENCE_GROWTH: f64 = 2.0;

/// Classify the trajectory of `E_0 S_n(θ)/√n` along an increasing schedule.
///
/// * diverges: the running maximum at the last point is at least twice the
///   running maximum at the last schedule point `≤ N/8`;
/// * converges to `L`: the last five values lie within `L ± 0.005`, with
///   `L` their mean;
/// * undecided otherwise.
pub fn limit_diagnosis(
    coeffs: &CoefficientSeq,
    past: &FrozenPast,
    theta: f64,
    schedule: &[usize],
) -> Result<LimitDiagnosis> {
    if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "schedule must be positive and strictly increasing".into(),
        ));
    }
    let path = ProjectionPath::new(coeffs, past, theta)?;
    let mut trajectory = Vec::with_capacity(schedule.len());
    let mut running_max = 0.0f64;
    let mut next = schedule.iter().peekable();
    let last = *schedule.last().unwrap();
    for n in 1..=last {
        let value = path.at(n) / (n as f64).sqrt();
        running_max = running_max.max(value.norm());
        if next.peek() == Some(&&n) {
            trajectory.push(TrajectoryPoint { n, value, running_max });
            next.next();
        }
    }
    let verdict = classify(&trajectory);
    Ok(LimitDiagnosis { verdict, trajectory })
}

pub(crate) fn classify(trajectory: &[TrajectoryPoint]) -> Verdict {
    let Some(end) = trajectory.last() else {
        return Verdict::Undecided;
    };
    let earlier = trajectory.iter().rev().find(|p| p.n <= end.n / 8);
    if let Some(earlier) = earlier {
        if end.running_max >= DIVERGENCE_GROWTH * earlier.running_max && end.running_max > 0.0 {
            return Verdict::Diverges;
        }
    }
    if trajectory.len() >= CONVERGENCE_WINDOW {
        let tail = &trajectory[trajectory.len() - CONVERGENCE_WINDOW..];
        let mean = tail.iter().map(|p| p.value).sum::<Complex64>() / CONVERGENCE_WINDOW as f64;
        if tail.iter().all(|p| (p.value - mean).norm() <= CONVERGENCE_BAND / 2.0) {
            return Verdict::ConvergesTo {
                re: mean.re,
                im: mean.im,
            };
        }
    }
    Verdict::Undecided
}

/// Powers of two up to `limit`, with `limit` itself appended.
pub fn doubling_schedule(limit: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|&n| n <= limit)
        .collect();
    if out.last() != Some(&limit) && limit > 0 {
        out.push(limit);
    }
    out
}

/// `max_{m_min ≤ m ≤ n} |ζ_{-m}(θ)| / √(m log log m)`, an iterated-logarithm
/// diagnostic on one path of the backward walk.
///
/// The almost-sure limit superior of the ratio is `‖ξ_0‖_2` for `θ ∉ {0, π}`
/// and `√2 ‖ξ_0‖_2` at the special angles; finite-`n` values are only
/// indicative.
pub fn lil_statistic(past: &FrozenPast, theta: f64, m_min: usize) -> f64 {
    let m_min = m_min.max(16);
    let path = zeta_path(past, theta, past.depth());
    path.iter()
        .enumerate()
        .skip(m_min)
        .map(|(m, z)| {
            let m = m as f64;
            z.norm() / (m * m.ln().ln()).sqrt()
        })
        .fold(0.0, f64::max)
}

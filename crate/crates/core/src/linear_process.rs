//! Sparse causal filters, their transfer functions, and the discrete Fourier
//! transform `S_n(θ) = Σ_{k<n} e^{ikθ} X_k` of the filtered process
//! `X_k = Σ_j a_j ξ_{k-j}`.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::innovations::FrozenPast;
use crate::phase::{canonical_angle, cis, special_angle, SpecialAngle};

pub type ComplexSample = Complex64;

/// Relative tolerance used when two evaluation routes must agree.
pub const EXPANSION_TOLERANCE: f64 = 1e-10;

pub(crate) fn agree(a: Complex64, b: Complex64) -> bool {
    (a - b).norm() <= EXPANSION_TOLERANCE * a.norm().max(b.norm()).max(1.0)
}

/// One stage of a block-structured sequence: `a_{n_k} = a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub k: usize,
    pub n_k: usize,
    pub a: f64,
}

#[derive(Deserialize)]
struct RawCoefficients {
    support: Vec<usize>,
    values: Vec<f64>,
    #[serde(default)]
    blocks: Vec<Block>,
}

/// Finitely supported coefficient sequence `(a_j)_{j≥0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoefficients")]
pub struct CoefficientSeq {
    support: Vec<usize>,
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl TryFrom<RawCoefficients> for CoefficientSeq {
    type Error = Error;

    fn try_from(raw: RawCoefficients) -> Result<Self> {
        CoefficientSeq::new(raw.support, raw.values)?.with_blocks(raw.blocks)
    }
}

impl CoefficientSeq {
    pub fn new(support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: values.len(),
            });
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("support must be strictly increasing".into()));
        }
        for (&j, &a) in support.iter().zip(&values) {
            if !a.is_finite() || a == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "coefficient a_{j} = {a} must be finite and nonzero"
                )));
            }
        }
        Ok(Self {
            support,
            values,
            blocks: Vec::new(),
        })
    }

    /// Keep the nonzero entries of a dense coefficient array.
    pub fn from_dense(dense: &[f64]) -> Result<Self> {
        let (support, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .unzip();
        Self::new(support, values)
    }

    pub fn zero() -> Self {
        Self {
            support: Vec::new(),
            values: Vec::new(),
            blocks: Vec::new(),
        }
    }

    /// `a_0 = 1`, i.e. `X_k = ξ_k`.
    pub fn identity() -> Self {
        Self::new(vec![0], vec![1.0]).expect("valid")
    }

    /// `a_j = ratio^j` for `j ≤ max_index`.
    pub fn geometric(ratio: f64, max_index: usize) -> Result<Self> {
        let dense: Vec<f64> = (0..=max_index).map(|j| ratio.powi(j as i32)).collect();
        Self::from_dense(&dense)
    }

    /// Attach a block structure. Every block must sit on the support with a
    /// matching value, and the `n_k` must increase with `k`.
    pub fn with_blocks(mut self, blocks: Vec<Block>) -> Result<Self> {
        for w in blocks.windows(2) {
            if w[0].k >= w[1].k || w[0].n_k >= w[1].n_k {
                return Err(Error::InvalidArgument("blocks must increase in k and n_k".into()));
            }
        }
        for b in &blocks {
            if self.coefficient(b.n_k) != b.a {
                return Err(Error::InvalidArgument(format!(
                    "block k={} records a_{} = {} but the sequence holds {}",
                    b.k,
                    b.n_k,
                    b.a,
                    self.coefficient(b.n_k)
                )));
            }
        }
        self.blocks = blocks;
        Ok(self)
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.k == k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.values.iter().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.support.last().copied()
    }

    pub fn coefficient(&self, j: usize) -> f64 {
        match self.support.binary_search(&j) {
            Ok(i) => self.values[i],
            Err(_) => 0.0,
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|a| a * a).sum()
    }

    /// Linear combination `α·self + β·other`, dropping exact cancellations.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(self.support.len() + other.support.len());
        let (mut i, mut j) = (0, 0);
        while i < self.support.len() || j < other.support.len() {
            let take_left = j >= other.support.len() || (i < self.support.len() && self.support[i] < other.support[j]);
            let take_right = i >= self.support.len() || (j < other.support.len() && other.support[j] < self.support[i]);
            if take_left {
                entries.push((self.support[i], alpha * self.values[i]));
                i += 1;
            } else if take_right {
                entries.push((other.support[j], beta * other.values[j]));
                j += 1;
            } else {
                entries.push((self.support[i], alpha * self.values[i] + beta * other.values[j]));
                i += 1;
                j += 1;
            }
        }
        let (support, values) = entries.into_iter().filter(|(_, a)| *a != 0.0).unzip();
        Self {
            support,
            values,
            blocks: Vec::new(),
        }
    }

    /// Support indices in `[lo, hi)` with their coefficients.
    fn range(&self, lo: usize, hi: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.support.partition_point(|&j| j < lo);
        let end = self.support.partition_point(|&j| j < hi);
        self.support[start..end]
            .iter()
            .copied()
            .zip(self.values[start..end].iter().copied())
    }
}

/// Finite set of frequencies in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    points: Vec<f64>,
}

impl ThetaGrid {
    pub fn from_points(points: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut points: Vec<f64> = points.into_iter().map(canonical_angle).collect();
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("theta grid contains non-finite angles".into()));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        if points.is_empty() {
            return Err(Error::InvalidArgument("theta grid must be nonempty".into()));
        }
        Ok(Self { points })
    }

    /// `resolution` equispaced points `2πi/resolution`, plus `0` and `π`.
    pub fn equispaced(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidArgument("grid resolution must be positive".into()));
        }
        let m = resolution as f64;
        let pts = (0..resolution).map(|i| PI * ((2 * i) as f64 / m));
        Self::from_points(pts.chain([0.0, PI]))
    }

    /// Cell midpoints `π(2i+1)/resolution`, excluding the special angle `π`.
    pub fn interior(resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidArgument("grid resolution must be positive".into()));
        }
        let m = resolution as f64;
        Self::from_points(
            (0..resolution)
                .map(|i| PI * ((2 * i + 1) as f64 / m))
                .filter(|t| special_angle(*t).is_none()),
        )
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn special(&self, idx: usize) -> Option<SpecialAngle> {
        special_angle(self.points[idx])
    }
}

impl FromStr for ThetaGrid {
    type Err = Error;

    /// `equispaced:<m>`, `interior:<m>` or `list:<θ1>,<θ2>,…`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("bad theta grid spec `{s}`")))?;
        let count = || {
            arg.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad grid size in `{s}`")))
        };
        match kind.trim() {
            "equispaced" => Self::equispaced(count()?),
            "interior" => Self::interior(count()?),
            "list" => {
                let pts = arg
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::InvalidArgument(format!("bad angle list in `{s}`")))?;
                Self::from_points(pts)
            }
            other => Err(Error::InvalidArgument(format!("unknown grid kind `{other}`"))),
        }
    }
}

/// Contiguous innovations `ξ_first, …, ξ_last`.
#[derive(Clone, Debug, PartialEq)]
pub struct InnovationWindow {
    first: i64,
    values: Vec<f64>,
}

impl InnovationWindow {
    pub fn new(first: i64, values: Vec<f64>) -> Self {
        Self { first, values }
    }

    /// `ξ_{-D}, …, ξ_0` from the past followed by `ξ_1, …` from `future`.
    pub fn from_past_and_future(past: &FrozenPast, future: &[f64]) -> Self {
        let mut values = Vec::with_capacity(past.depth() + 1 + future.len());
        values.extend(past.values().iter().rev());
        values.extend_from_slice(future);
        Self {
            first: -(past.depth() as i64),
            values,
        }
    }

    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn last(&self) -> i64 {
        self.first + self.values.len() as i64 - 1
    }

    #[inline]
    pub fn get(&self, index: i64) -> Result<f64> {
        let offset = index - self.first;
        if offset < 0 || offset >= self.values.len() as i64 {
            return Err(Error::WindowTooShort { missing: index });
        }
        Ok(self.values[offset as usize])
    }
}

/// `f_k(θ) = Σ_{j<k} a_j e^{ijθ}`, zero for `k ≤ 0`.
pub fn f_partial(coeffs: &CoefficientSeq, k: i64, theta: f64) -> ComplexSample {
    if k <= 0 {
        return Complex64::new(0.0, 0.0);
    }
    let theta = canonical_angle(theta);
    coeffs.range(0, k as usize).map(|(j, a)| a * cis(j as i64, theta)).sum()
}

/// `f_hi(θ) - f_lo(θ)` for `0 ≤ lo ≤ hi`.
fn f_difference(coeffs: &CoefficientSeq, lo: usize, hi: usize, theta: f64) -> ComplexSample {
    coeffs.range(lo, hi).map(|(j, a)| a * cis(j as i64, theta)).sum()
}

/// `f(θ) = Σ_j a_j e^{ijθ}` for a finitely supported sequence.
pub fn transfer_fn(coeffs: &CoefficientSeq, theta: f64) -> ComplexSample {
    let theta = canonical_angle(theta);
    coeffs.iter().map(|(j, a)| a * cis(j as i64, theta)).sum()
}

/// `X_k = Σ_j a_j ξ_{k-j}`.
pub fn process_value(coeffs: &CoefficientSeq, window: &InnovationWindow, k: i64) -> Result<f64> {
    let mut x = 0.0;
    for (j, a) in coeffs.iter() {
        x += a * window.get(k - j as i64)?;
    }
    Ok(x)
}

/// `S_n(θ)` summed term by term from the process values.
pub fn dft_direct(coeffs: &CoefficientSeq, window: &InnovationWindow, n: usize, theta: f64) -> Result<ComplexSample> {
    let theta = canonical_angle(theta);
    let mut s = Complex64::new(0.0, 0.0);
    for k in 0..n as i64 {
        s += cis(k, theta) * process_value(coeffs, window, k)?;
    }
    Ok(s)
}

/// Both innovation-weighted expansions of `S_n(θ)`:
///
/// * `Σ_{j<n} (f_{n-j} - f_{-j})(θ) ξ_j e^{ijθ}`
/// * `Σ_k a_k Σ_{j<n} e^{ijθ} ξ_{j-k}`
pub fn dft_walk_forms(
    coeffs: &CoefficientSeq,
    window: &InnovationWindow,
    n: usize,
    theta: f64,
) -> Result<(ComplexSample, ComplexSample)> {
    let theta = canonical_angle(theta);
    let zero = Complex64::new(0.0, 0.0);
    let Some(max_index) = coeffs.max_index() else {
        return Ok((zero, zero));
    };
    let n_i = n as i64;

    let mut first = zero;
    for j in -(max_index as i64)..n_i {
        let lo = (-j).max(0) as usize;
        let hi = (n_i - j) as usize;
        let weight = f_difference(coeffs, lo, hi, theta);
        if weight != zero {
            first += weight * window.get(j)? * cis(j, theta);
        }
    }

    let mut second = zero;
    for (k, a) in coeffs.iter() {
        let mut inner = zero;
        for j in 0..n_i {
            inner += cis(j, theta) * window.get(j - k as i64)?;
        }
        second += a * inner;
    }
    Ok((first, second))
}

/// `S_n(θ)` through the innovation expansions, with the two forms cross-checked.
pub fn dft_by_walks(coeffs: &CoefficientSeq, window: &InnovationWindow, n: usize, theta: f64) -> Result<ComplexSample> {
    let (first, second) = dft_walk_forms(coeffs, window, n, theta)?;
    if !agree(first, second) {
        return Err(Error::InternalMismatch {
            context: "dft_by_walks",
            first,
            second,
        });
    }
    Ok(first)
}

//! Goodness-of-fit and independence checks for quenched ensembles, and
//! convergence-of-types utilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Smallest sample size accepted by [`match_affine_type`].
pub const MIN_TYPE_SAMPLES: usize = 100;

/// Sample standard deviation below which a sample counts as constant.
pub const DEGENERACY_STD: f64 = 1e-6;

/// Asymptotic Kolmogorov critical value `c(α) = √(-ln(α/2)/2)`; the test
/// rejects when `D_M ≥ c(α)/√M`.
pub fn ks_critical_value(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub ks_statistic: f64,
    pub sample_size: usize,
    pub alpha: f64,
    /// `c(α)/√M`.
    pub critical_value: f64,
    pub pass: bool,
    pub sigma: f64,
    pub theta: Option<f64>,
    pub n: Option<usize>,
}

impl GofReport {
    pub fn at(mut self, theta: f64, n: usize) -> Self {
        self.theta = Some(theta);
        self.n = Some(n);
        self
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    xs
}

fn ensure_finite(samples: &[f64]) -> Result<()> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    Ok(())
}

/// Exact one-sample Kolmogorov–Smirnov test against `N(0, σ²)`; `σ = 0`
/// targets the point mass at zero.
pub fn ks_normal(samples: &[f64], sigma: f64, alpha: f64) -> Result<GofReport> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    ensure_finite(samples)?;
    let m = samples.len() as f64;
    let d = if sigma == 0.0 {
        let below = samples.iter().filter(|&&x| x < 0.0).count() as f64;
        let above = samples.iter().filter(|&&x| x > 0.0).count() as f64;
        (below / m).max(above / m)
    } else {
        let law = Normal::new(0.0, sigma).expect("positive sigma");
        sorted(samples)
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = law.cdf(x);
                ((i + 1) as f64 / m - f).max(f - i as f64 / m)
            })
            .fold(0.0, f64::max)
    };
    let critical_value = ks_critical_value(alpha) / m.sqrt();
    Ok(GofReport {
        ks_statistic: d.clamp(0.0, 1.0),
        sample_size: samples.len(),
        alpha,
        critical_value,
        pass: d < critical_value,
        sigma,
        theta: None,
        n: None,
    })
}

/// Two-sample Kolmogorov–Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    let (a, b) = (sorted(a), sorted(b));
    let (ma, mb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / ma - j as f64 / mb).abs());
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub correlation: f64,
    pub sample_size: usize,
    /// `3/√M`.
    pub band: f64,
    /// `max(0.05, 3/√M)`.
    pub threshold: f64,
    pub pass: bool,
}

/// Pearson correlation between real and imaginary parts. A constant input
/// carries no linear dependence and is reported as zero correlation.
pub fn independence_check(re: &[f64], im: &[f64]) -> Result<CorrelationReport> {
    if re.len() != im.len() {
        return Err(Error::LengthMismatch {
            left: re.len(),
            right: im.len(),
        });
    }
    if re.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two pairs".into()));
    }
    ensure_finite(re)?;
    ensure_finite(im)?;
    let m = re.len() as f64;
    let mr = re.iter().sum::<f64>() / m;
    let mi = im.iter().sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in re.iter().zip(im) {
        let (dx, dy) = (x - mr, y - mi);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let correlation = if sxx > 0.0 && syy > 0.0 {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let band = 3.0 / m.sqrt();
    let threshold = band.max(0.05);
    Ok(CorrelationReport {
        correlation,
        sample_size: re.len(),
        band,
        threshold,
        pass: correlation.abs() < threshold,
    })
}

/// Result of fitting `Y ≈ a X + b` in distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeMatch {
    pub a_hat: f64,
    pub b_hat: f64,
    /// Two-sample KS distance between `Y` and `a_hat X + b_hat`.
    pub residual: f64,
    /// `a_hat > 0`: the fitted map preserves orientation.
    pub matched: bool,
}

const QUANTILE_LO: f64 = 0.05;
const QUANTILE_HI: f64 = 0.95;
const QUANTILE_LEVELS: usize = 181;

/// Linear-interpolation empirical quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_std(xs: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Least-squares match of the 5%–95% empirical quantiles of `Y` against
/// those of `a X + b`.
pub fn match_affine_type(x: &[f64], y: &[f64]) -> Result<TypeMatch> {
    for (name, s) in [("X", x), ("Y", y)] {
        if s.len() < MIN_TYPE_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "{name} has {} samples, at least {MIN_TYPE_SAMPLES} are required",
                s.len()
            )));
        }
        ensure_finite(s)?;
    }
    let std = sample_std(x);
    if std <= DEGENERACY_STD {
        return Err(Error::DegenerateSample { std });
    }
    let (sx, sy) = (sorted(x), sorted(y));
    let step = (QUANTILE_HI - QUANTILE_LO) / (QUANTILE_LEVELS - 1) as f64;
    let pairs: Vec<(f64, f64)> = (0..QUANTILE_LEVELS)
        .map(|i| {
            let p = QUANTILE_LO + i as f64 * step;
            (quantile(&sx, p), quantile(&sy, p))
        })
        .collect();
    let k = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateSample { std: 0.0 });
    }
    let a_hat = sxy / sxx;
    let b_hat = my - a_hat * mx;
    let fitted: Vec<f64> = x.iter().map(|v| a_hat * v + b_hat).collect();
    Ok(TypeMatch {
        a_hat,
        b_hat,
        residual: ks_two_sample(y, &fitted)?,
        matched: a_hat > 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftTolerance {
    /// Largest sample standard deviation of the final `Y_k`.
    pub spread: f64,
    /// Largest oscillation of `c_k` over the second half of the sequence.
    pub cauchy: f64,
}

impl Default for ShiftTolerance {
    fn default() -> Self {
        Self {
            spread: 0.1,
            cauchy: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftLimit {
    pub converged: bool,
    /// `lim c_k`, when the tail is Cauchy within tolerance.
    pub limit: Option<f64>,
    pub final_spread: f64,
    pub cauchy_gap: f64,
    /// Median of the final `Y_k` shifted by the limit: the location of `Z = Y + c`.
    pub predicted_location: Option<f64>,
    pub tolerance: ShiftTolerance,
}

/// Degenerate branch of convergence of types: `Y_k` collapsing to a constant
/// while `c_k` settles, so that `Y_k + c_k ⇒ Y + c`.
pub fn degenerate_shift_limit(samples: &[Vec<f64>], shifts: &[f64], tolerance: ShiftTolerance) -> Result<ShiftLimit> {
    if samples.is_empty() || samples.len() != shifts.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: shifts.len(),
        });
    }
    if samples.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySample);
    }
    let last = samples.last().expect("nonempty");
    let final_spread = if last.len() > 1 { sample_std(last) } else { 0.0 };
    let tail = &shifts[shifts.len() / 2..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
        (lo.min(c), hi.max(c))
    });
    let cauchy_gap = hi - lo;
    let converged = final_spread <= tolerance.spread && cauchy_gap <= tolerance.cauchy;
    let limit = converged.then(|| *shifts.last().expect("nonempty"));
    let predicted_location = limit.map(|c| quantile(&sorted(last), 0.5) + c);
    Ok(ShiftLimit {
        converged,
        limit,
        final_spread,
        cauchy_gap,
        predicted_location,
        tolerance,
    })
}

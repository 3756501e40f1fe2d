//! Reproducible i.i.d. innovation streams.
//!
//! Every stream is addressed by a [`SeedSpec`]: a master seed plus a
//! `(role, replicate, block)` stream id. The id is hashed into a ChaCha key, so
//! streams never share generator state and can be produced in any order or on
//! any thread with identical results.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Law of a single innovation. Both laws are centered with unit variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationLaw {
    #[default]
    Rademacher,
    StandardNormal,
}

impl InnovationLaw {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            InnovationLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            InnovationLaw::StandardNormal => rng.sample(StandardNormal),
        }
    }

    /// Almost-sure bound on `|ξ|`, if the law is bounded.
    pub fn bound(self) -> Option<f64> {
        match self {
            InnovationLaw::Rademacher => Some(1.0),
            InnovationLaw::StandardNormal => None,
        }
    }
}

impl fmt::Display for InnovationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InnovationLaw::Rademacher => f.write_str("rademacher"),
            InnovationLaw::StandardNormal => f.write_str("standard_normal"),
        }
    }
}

impl FromStr for InnovationLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rademacher" => Ok(InnovationLaw::Rademacher),
            "standard_normal" | "normal" | "gaussian" => Ok(InnovationLaw::StandardNormal),
            other => Err(Error::InvalidArgument(format!("unknown innovation law `{other}`"))),
        }
    }
}

/// Address of one innovation stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub role: String,
    pub replicate: u64,
    pub block: u64,
}

impl SeedSpec {
    pub fn new(master: u64, role: impl Into<String>, replicate: u64, block: u64) -> Self {
        Self {
            master,
            role: role.into(),
            replicate,
            block,
        }
    }

    /// 256-bit generator key derived from the full stream id.
    pub fn key(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"quenched-dft/seed/v1");
        hasher.update(self.master.to_le_bytes());
        hasher.update((self.role.len() as u64).to_le_bytes());
        hasher.update(self.role.as_bytes());
        hasher.update(self.replicate.to_le_bytes());
        hasher.update(self.block.to_le_bytes());
        hasher.finalize().into()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }

    pub fn stream(&self, law: InnovationLaw) -> InnovationStream {
        InnovationStream { law, rng: self.rng() }
    }
}

/// Endless sequence of innovations drawn from one seeded stream.
#[derive(Clone, Debug)]
pub struct InnovationStream {
    law: InnovationLaw,
    rng: ChaCha8Rng,
}

impl InnovationStream {
    #[inline]
    pub fn next_value(&mut self) -> f64 {
        self.law.sample(&mut self.rng)
    }

    pub fn law(&self) -> InnovationLaw {
        self.law
    }
}

impl Iterator for InnovationStream {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        Some(self.next_value())
    }
}

/// A frozen realization of the past `ξ_0, ξ_{-1}, …, ξ_{-D}`.
///
/// `values()[m]` is `ξ_{-m}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenPast {
    values: Vec<f64>,
}

impl FrozenPast {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("frozen past needs at least ξ_0".into()));
        }
        if let Some(m) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite past value at index -{m}")));
        }
        Ok(Self { values })
    }

    pub fn depth(&self) -> usize {
        self.values.len() - 1
    }

    /// `ξ_{-m}`.
    #[inline]
    pub fn get(&self, m: usize) -> f64 {
        self.values[m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Require the past to reach `ξ_{-required}`.
    pub fn ensure_depth(&self, required: usize) -> Result<()> {
        if self.depth() < required {
            Err(Error::PastTooShallow {
                required,
                depth: self.depth(),
            })
        } else {
            Ok(())
        }
    }
}

/// Draw `ξ_0, ξ_{-1}, …, ξ_{-depth}` from the stream addressed by `seed`.
pub fn draw_past(law: InnovationLaw, depth: usize, seed: &SeedSpec) -> FrozenPast {
    let values = seed.stream(law).take(depth + 1).collect();
    FrozenPast { values }
}

/// Draw the future innovations `ξ_1, …, ξ_{n-1}` entering `S_n`.
pub fn draw_future(law: InnovationLaw, horizon: usize, seed: &SeedSpec) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("future horizon must be at least 1".into()));
    }
    Ok(seed.stream(law).take(horizon - 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
        cov / (va * vb).sqrt()
    }

    #[test]
    fn depth_zero_rademacher_past_is_a_sign() {
        let past = draw_past(InnovationLaw::Rademacher, 0, &SeedSpec::new(3, "past", 0, 0));
        assert_eq!(past.depth(), 0);
        assert!(past.get(0) == 1.0 || past.get(0) == -1.0);
    }

    #[test]
    fn equal_seeds_give_identical_draws() {
        let seed = SeedSpec::new(11, "past", 4, 2);
        for law in [InnovationLaw::Rademacher, InnovationLaw::StandardNormal] {
            assert_eq!(draw_past(law, 500, &seed), draw_past(law, 500, &seed));
            assert_eq!(
                draw_future(law, 300, &seed).unwrap(),
                draw_future(law, 300, &seed).unwrap()
            );
        }
    }

    #[test]
    fn unit_horizon_has_no_future_terms() {
        let f = draw_future(InnovationLaw::StandardNormal, 1, &SeedSpec::new(1, "future", 0, 0)).unwrap();
        assert!(f.is_empty());
        assert!(draw_future(InnovationLaw::Rademacher, 0, &SeedSpec::new(1, "future", 0, 0)).is_err());
    }

    #[test]
    fn stream_ids_change_the_key() {
        let base = SeedSpec::new(7, "future", 0, 0);
        let keys = [
            base.key(),
            SeedSpec::new(8, "future", 0, 0).key(),
            SeedSpec::new(7, "past", 0, 0).key(),
            SeedSpec::new(7, "future", 1, 0).key(),
            SeedSpec::new(7, "future", 0, 1).key(),
        ];
        for i in 0..keys.len() {
            for j in (i + 1)..keys.len() {
                assert_ne!(keys[i], keys[j]);
            }
        }
    }

    #[test]
    fn normal_past_has_unit_variance() {
        let past = draw_past(
            InnovationLaw::StandardNormal,
            1_000_000 - 1,
            &SeedSpec::new(5, "past", 0, 0),
        );
        let (mean, var) = mean_var(past.values());
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "variance {var}");
    }

    #[test]
    fn rademacher_moments_and_support() {
        let past = draw_past(
            InnovationLaw::Rademacher,
            1_000_000 - 1,
            &SeedSpec::new(5, "past", 1, 0),
        );
        assert!(past.values().iter().all(|&v| v == 1.0 || v == -1.0));
        let (mean, var) = mean_var(past.values());
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "variance {var}");
    }

    #[test]
    fn distinct_replicates_are_uncorrelated() {
        for law in [InnovationLaw::Rademacher, InnovationLaw::StandardNormal] {
            let a = draw_future(law, 100_001, &SeedSpec::new(9, "future", 0, 0)).unwrap();
            let b = draw_future(law, 100_001, &SeedSpec::new(9, "future", 1, 0)).unwrap();
            let c = correlation(&a, &b);
            assert!(c.abs() < 0.01, "{law}: correlation {c}");
        }
    }

    #[test]
    fn autocorrelation_is_small_at_short_lags() {
        let n = 100_000;
        let xs = draw_future(InnovationLaw::StandardNormal, n + 11, &SeedSpec::new(2, "future", 0, 0)).unwrap();
        let band = 4.0 / (n as f64).sqrt();
        for lag in 1..=10 {
            let c = correlation(&xs[..n], &xs[lag..lag + n]);
            assert!(c.abs() < band, "lag {lag}: {c}");
        }
    }

    #[test]
    fn seed_spec_json_shape() {
        let seed = SeedSpec::new(42, "past", 3, 1);
        let json = serde_json::to_string(&seed).unwrap();
        assert_eq!(json, r#"{"master":42,"role":"past","replicate":3,"block":1}"#);
        let back: SeedSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, seed);
    }

    #[test]
    fn frozen_past_rejects_bad_values() {
        assert!(FrozenPast::from_values(vec![]).is_err());
        assert!(FrozenPast::from_values(vec![1.0, f64::NAN]).is_err());
        let past = FrozenPast::from_values(vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            past.ensure_depth(3),
            Err(Error::PastTooShallow { required: 3, depth: 1 })
        ));
    }
}

//! Angle handling and the phase recurrence used on long walks.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

/// Steps between exact re-anchoring of a [`Rotor`].
pub const ANCHOR_INTERVAL: u64 = 128;

/// Reduce an angle to `[0, 2π)`.
pub fn canonical_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// `e^{i k θ}` by direct trigonometric evaluation.
#[inline]
pub fn cis(k: i64, theta: f64) -> Complex64 {
    let (s, c) = (k as f64 * theta).sin_cos();
    Complex64::new(c, s)
}

/// Special angles where the rotated walks are real-valued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecialAngle {
    Zero,
    Pi,
}

pub fn special_angle(theta: f64) -> Option<SpecialAngle> {
    let t = canonical_angle(theta);
    if t == 0.0 {
        Some(SpecialAngle::Zero)
    } else if t == PI {
        Some(SpecialAngle::Pi)
    } else {
        None
    }
}

/// Incremental generator of `e^{i k ω}` for `k = 0, 1, 2, …`.
///
/// Multiplies by `e^{iω}` between anchors and recomputes the phase exactly
/// every [`ANCHOR_INTERVAL`] steps, which keeps the drift below `1e-13`.
#[derive(Clone, Copy, Debug)]
pub struct Rotor {
    omega: f64,
    index: u64,
    current: Complex64,
    step: Complex64,
}

impl Rotor {
    pub fn new(omega: f64) -> Self {
        let (s, c) = omega.sin_cos();
        Self {
            omega,
            index: 0,
            current: Complex64::new(1.0, 0.0),
            step: Complex64::new(c, s),
        }
    }

    #[inline]
    pub fn current(&self) -> Complex64 {
        self.current
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    #[inline]
    pub fn advance(&mut self) {
        self.index += 1;
        if self.index.is_multiple_of(ANCHOR_INTERVAL) {
            let (s, c) = (self.index as f64 * self.omega).sin_cos();
            self.current = Complex64::new(c, s);
        } else {
            self.current *= self.step;
        }
    }
}

/// Largest deviation between the rotor and direct evaluation over `n` steps.
pub fn rotor_deviation(omega: f64, n: u64) -> f64 {
    let mut rotor = Rotor::new(omega);
    let mut worst = 0.0f64;
    for k in 0..n {
        let exact = cis(k as i64, omega);
        worst = worst.max((rotor.current() - exact).norm());
        rotor.advance();
    }
    worst
}

//! Quenched central limit behaviour of the discrete Fourier transform of a
//! causal linear process, and a sparse construction where the conditional
//! centering escapes every bound.

pub mod cli;
pub mod counterexample;
pub mod error;
pub mod innovations;
pub mod linear_process;
pub mod phase;
pub mod quenched;
pub mod stats;

pub use error::{Error, Result};
pub use innovations::{draw_future, draw_past, FrozenPast, InnovationLaw, SeedSpec};
pub use linear_process::{
    dft_by_walks, dft_direct, f_partial, process_value, Block, CoefficientSeq, InnovationWindow, ThetaGrid,
};
pub use quenched::{conditional_dft, quenched_sample, sigma_theta, QuenchedEnsemble};

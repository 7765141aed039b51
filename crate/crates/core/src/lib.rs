//! Recovery of piecewise-constant signals from undersampled linear
//! measurements corrupted by multiplicative (speckle) noise,
//!
//! ```text
//! y = A diag(x) w + z,    w ~ N(0, σ_w² I_n),  z ~ N(0, σ_z² I_m),  m < n.
//! ```
//!
//! The crate is organised bottom-up:
//!
//! - [`measurement`]: signals, measurement matrices, noise and replayable instances.
//! - [`likelihood`]: the speckle negative log-likelihood in its three regimes
//!   and the analytic gradient of the small-additive-noise limit.
//! - [`compression`]: the piecewise-constant compression code, its rate and
//!   distortion accounting, and exact/approximate projection onto the codebook.
//! - [`solvers`]: projected gradient descent, multi-start PGD, the multilevel
//!   (breakpoints × values) solver and the PGD-seeded multilevel hybrid.
//! - [`theory`]: the high-probability MSE bound and its sparse-rate corollary.
//! - [`harness`]: seeded Monte-Carlo experiments, PSNR, CSV outputs.

pub mod compression;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod measurement;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};

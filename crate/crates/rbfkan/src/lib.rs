//! Adaptive radial-basis-function Kolmogorov-Arnold networks.
//!
//! This crate approximates scattered 2D data with KANs whose edge
//! functions are RBF expansions over a fixed center grid. The kernel
//! family covers Gaussian, inverse multiquadric, Matern and Wendland
//! kernels; the kernel scale `h` is initialized by a closed-form
//! leave-one-out cross-validation search (Rippa's formula) and then
//! trained jointly with the coefficients in log space, so it can never
//! leave the positive domain.
//!
//! The building blocks:
//!
//! - [`kernels`]: the eight radial kernels and their analytic derivatives
//! - [`linalg`]: the small dense symmetric solver behind the LOOCV score
//! - [`loocv`]: Rippa leave-one-out errors and the two-stage `h` search
//! - [`kan`]: the adaptive RBF-KAN model (forward, reverse-mode gradients,
//!   save/load)
//! - [`baselines`]: fixed-shape FastKAN, B-spline KAN, Chebyshev KAN, MLP
//! - [`training`]: full-batch Adam loop shared by every model
//! - [`benchmarks`]: the four target functions, dataset generation,
//!   surface reconstruction
//! - [`experiment`]: config files, reports, and the batch experiment
//!   matrix behind the `rbfkan` binary
//!
//! Start with the runnable examples (`cargo run --release --example ...`):
//! `kernel_gallery`, `loocv_search`, `train_adaptive`, `compare_baselines`,
//! `export_surface`, and `model_roundtrip`.

pub mod baselines;
pub mod benchmarks;
pub mod error;
pub mod experiment;
pub mod kan;
pub mod kernels;
pub mod linalg;
pub mod loocv;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use kernels::KernelKind;

//! Privacy-utility tradeoff toolkit.
//!
//! A privatizer releases a sanitized version `F` of private data `X`. An
//! authorized reconstructor estimates `X` from `(F, Y)` under a distortion
//! budget `D`, while two unauthorized adversaries estimate `X` from
//! `(F, Z1)` and `(F, Z2)`. The privatizer maximizes the smaller of the two
//! adversarial losses subject to the reconstructor staying below `D`.
//!
//! The crate provides:
//!
//! * [`sources`] — joint Gaussian and Bernoulli/BSC source models and
//!   reproducible dataset generation,
//! * [`gaussian`] — the closed-form Gaussian solution plus an exact
//!   Schur-complement conditional-variance oracle,
//! * [`binary`] — the exact maximin flip-channel solver with MAP estimators
//!   and a grid refinement pass,
//! * [`neuralkit`] — a small fixed 2-50-1 MLP with exact backprop, Adam and
//!   RAdam, and finite-difference gradient checking,
//! * [`trainer`] — the alternating privatizer/reconstructor/adversary
//!   minimax training loop with the symmetric distortion penalty,
//! * [`sweep`] — the distortion-sweep experiment protocol (qualifying
//!   window, median selection, monotone acceptance, CSV emission),
//! * [`config`] — JSON run configuration with full-report validation.

pub mod binary;
pub mod config;
pub mod gaussian;
pub mod neuralkit;
pub mod sources;
pub mod sweep;
pub mod trainer;

pub use config::RunConfig;
pub use trainer::Mode;
pub use sources::{BinarySource, Dataset, GaussianJointSource};

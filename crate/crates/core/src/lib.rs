//! Parameter-space methods for temporal generalization.
//!
//! A model trained sequentially on time-stamped data leaves behind a
//! trajectory of checkpoints. This crate estimates parameters for future
//! timestamps from that trajectory alone:
//!
//! * [`interp`]: convex merging (uniform or EMA weights), the recent model,
//!   and norm downscaling.
//! * [`extrap`]: first- and second-order finite-difference Taylor steps and
//!   the learned global offset / softplus coefficient fits.
//! * [`tuning`]: leak-free selection of the method hyperparameter on the
//!   current validation split.
//! * [`evaluation`]: forward-transfer metrics and trajectory analytics.
//! * [`synthetic`]: a seeded cubic-drift regression benchmark with OLS and
//!   one-hidden-layer MLP learners.
//!
//! Everything that stores parameters is generic over [`Scalar`] (`f32` or
//! `f64`); arithmetic is accumulated in `f64` and cast back on output.

pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod extrap;
pub mod interp;
pub mod method;
pub mod rng;
pub mod scalar;
pub mod synthetic;
pub mod tuning;

pub use checkpoint::{AnyCheckpoint, Checkpoint, FlatView, Tensor, Trajectory};
pub use error::{Error, Result};
pub use method::MethodSpec;
pub use scalar::{DType, Scalar};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type FlatView32 = FlatView<f32>;
pub type FlatView64 = FlatView<f64>;

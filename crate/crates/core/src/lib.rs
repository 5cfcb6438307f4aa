//! Robust locally-linear controllable embedding.
//!
//! Learns a low-dimensional latent space for pixel observations in which the
//! dynamics are locally linear, then plans in that space with iLQR. The
//! crate is `no_std` (it needs `alloc`); file formats and the command line
//! live in the `rce` companion crate.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors, the reverse-mode [`tensor::Tape`] and MLPs.
//! - [`distributions`]: diagonal Gaussians and Bernoulli pixel likelihoods.
//! - [`model`]: encoder, backward encoder, linearization head, decoder and
//!   the rank-one latent transitions.
//! - [`training`]: the variational lower bound, Adam and the epoch loop.
//! - [`env`]: the planar navigation system, renderer and dataset generator.
//! - [`planner`]: augmented-state LQR, iLQR and receding-horizon control.
//! - [`metrics`]: reconstruction, prediction and planning losses and the
//!   success rate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod distributions;
pub mod env;
pub mod math;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod tensor;
pub mod training;

pub use distributions::DiagGaussian;
pub use model::{Architecture, BackwardEncode, LatentModel, LocalLinearDynamics, ModelDims, RceParams};
pub use tensor::{Tape, Tensor, TensorError, Var};

//! Feedforward network training with short circuits: backward-only
//! connections that add a rear layer's sensitivity, scaled by a weight λ,
//! into the weight gradient of an earlier layer of the same width.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`], [`activation`], [`loss`]: numeric substrate.
//! - [`topology`]: network and short-circuit description, validation, init.
//! - [`engine`]: forward trace, backward pass with short-circuit injection, SGD.
//! - [`verify`]: finite-difference and algebraic oracles, gradient telemetry.
//! - [`data`]: MNIST IDX loading, synthetic blobs, seeded batching.
//! - [`experiment`]: config-driven runs, paired comparisons, sweeps.

pub mod activation;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod matrix;
pub mod topology;
pub mod verify;

pub use activation::Activation;
pub use engine::{backward, forward, sgd_step, train_step, ForwardTrace, GradientSet, ParamGrads};
pub use error::{Error, Result};
pub use loss::Loss;
pub use matrix::Matrix;
pub use topology::{
    init_weights, plan_sc_layers, validate, LayerKind, LayerSpec, NetworkConfig, Params, ScEdge,
    ShortCircuitSpec, Topology,
};

//! Norm-hierarchy transition laboratory.
//!
//! The crate is split by role:
//!
//! - [`theory`]: closed-form contraction recursions, escape times, lower bounds and
//!   the training-budget condition.
//! - [`trainer`]: a dense MLP trainer with the regularised update
//!   `θ ← θ − η(∇L + 2λθ) + ηξ`, AdamW, cosine schedules and per-layer norm tracking.
//! - [`tasks`]: synthetic tasks with a controllable norm hierarchy (spurious-feature
//!   classification, modular addition, a linear benchmark with known interpolators).
//! - [`diagnostics`]: regime classification, transition times, shortcut reliance,
//!   separation scores and delay-law fits computed from run traces.
//!
//! All randomness flows from explicit seeds; every generator and training run is a
//! pure function of its configuration.

pub mod diagnostics;
pub mod error;
pub mod rng;
pub mod tasks;
pub mod theory;
pub mod trainer;

pub use diagnostics::{DelayFit, RegimeLabel, RegimeThresholds, TransitionReport};
pub use error::{Error, Result};
pub use tasks::{Dataset, Targets, TaskBundle, TaskMeta};
pub use theory::{LayerRateSpec, NormPair, TheoryParams};
pub use trainer::{
    Checkpoint, LRSchedule, MLPArch, OptimizerConfig, OptimizerKind, ParamVector, RunTrace,
};

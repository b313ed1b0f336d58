//! Dense ReLU networks trained from scratch with per-layer norm tracking.

mod mlp;
mod optim;
mod params;
mod run;
mod schedule;

pub use mlp::{backward, forward_loss, predict, score, Batch};
pub use optim::{
    adamw_step, sample_noise, sgd_wd_step, AdamHyper, AdamState, OptimizerConfig, OptimizerKind,
};
pub use params::{init_params, Activation, Layer, MLPArch, ParamVector};
pub use run::{train_run, Checkpoint, RunConfig, RunSpec, RunTrace};
pub use schedule::{cosine_lr, LRSchedule, ScheduleKind};

//! One experiment cell: a fully resolved config trained end to end.

use nht_core::diagnostics::{first_step_below, ReportSettings, TransitionReport};
use nht_core::tasks::{gen_linear_hierarchy, gen_modular, gen_spurious, linear_params, TaskBundle};
use nht_core::theory::{escape_time, NormPair};
use nht_core::trainer::{
    train_run, LRSchedule, MLPArch, OptimizerConfig, RunConfig, RunSpec, RunTrace, ScheduleKind,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InitMode, TaskSection};
use crate::output::sha256_hex;

pub const SCHEMA_VERSION: u32 = 1;

/// Coordinates of a cell inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub lambda: f64,
    /// Present for the spurious task only.
    pub rho: Option<f64>,
    pub seed: u64,
}

impl CellKey {
    /// Directory-safe identifier, e.g. `lambda=0.1_rho=0.95_seed=3`.
    pub fn id(&self) -> String {
        match self.rho {
            Some(rho) => format!("lambda={}_rho={}_seed={}", self.lambda, rho, self.seed),
            None => format!("lambda={}_seed={}", self.lambda, self.seed),
        }
    }
}

/// Everything a run depends on, with sweep coordinates and seeds already applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub task: TaskSection,
    pub arch: MLPArch,
    pub optim: OptimizerConfig,
    pub schedule: LRSchedule,
    pub run: RunConfig,
    pub init: InitMode,
    pub thresholds: ReportSettings,
}

fn task_dims(task: &TaskSection) -> (usize, usize) {
    match task {
        TaskSection::Spurious(c) => (c.d_structured + c.d_shortcut, c.num_classes),
        TaskSection::Modular(c) => (2 * c.modulus as usize, c.modulus as usize),
        TaskSection::Linear(c) => (c.d, 1),
    }
}

fn chance_of(task: &TaskSection) -> f64 {
    match task {
        TaskSection::Spurious(c) => 1.0 / c.num_classes as f64,
        TaskSection::Modular(c) => 1.0 / c.modulus as f64,
        TaskSection::Linear(_) => 0.0,
    }
}

impl CellConfig {
    pub fn resolve(cfg: &ExperimentConfig, key: &CellKey) -> Self {
        let mut task = cfg.task.clone();
        match &mut task {
            TaskSection::Spurious(c) => {
                c.seed = c.seed.wrapping_add(key.seed);
                if let Some(rho) = key.rho {
                    c.rho = rho;
                }
            }
            TaskSection::Modular(c) => c.seed = c.seed.wrapping_add(key.seed),
            TaskSection::Linear(c) => c.seed = c.seed.wrapping_add(key.seed),
        }
        let (input, output) = task_dims(&task);
        Self {
            arch: cfg.arch_for(input, output),
            task,
            optim: OptimizerConfig {
                lambda: key.lambda,
                ..cfg.optim.clone()
            },
            schedule: cfg.schedule.clone(),
            run: cfg.run.run_config(key.seed),
            init: cfg.run.init,
            thresholds: cfg.thresholds,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("cell configs always serialise")
                .as_bytes(),
        )
    }
}

/// Final-checkpoint metrics; accuracies are absent when the split is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
    pub acc_colored: Option<f64>,
    pub acc_clean: Option<f64>,
    pub acc_shortcut: Option<f64>,
    pub total_norm2: f64,
    pub peak_norm2: f64,
}

/// Gradient-free escape on the linear task compared with the closed-form prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeCheck {
    pub v_start: f64,
    pub v_target: f64,
    pub measured_step: Option<usize>,
    pub predicted_step: u64,
    pub checkpoint_interval: usize,
    pub within_one_checkpoint: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// The per-cell artifact written as `cell.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub schema_version: u32,
    pub cell_id: String,
    pub config_hash: String,
    pub key: CellKey,
    pub config: CellConfig,
    pub status: CellStatus,
    pub error: Option<String>,
    pub eta_lambda: f64,
    pub chance: f64,
    pub final_metrics: Option<FinalMetrics>,
    pub report: Option<TransitionReport>,
    pub escape: Option<EscapeCheck>,
    /// Transition delay in steps: the measured escape step for gradient-free runs,
    /// otherwise the clean-accuracy transition step.
    pub delay: Option<f64>,
    /// `ln(peak norm / final norm)`.
    pub log_norm_ratio: Option<f64>,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

pub struct CellRun {
    pub trace: RunTrace,
    pub record: CellRecord,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn build_task(
    task: &TaskSection,
) -> nht_core::Result<(TaskBundle, Option<nht_core::tasks::LinearOracles>)> {
    Ok(match task {
        TaskSection::Spurious(c) => (gen_spurious(c)?, None),
        TaskSection::Modular(c) => (gen_modular(c)?, None),
        TaskSection::Linear(c) => {
            let (b, o) = gen_linear_hierarchy(c)?;
            (b, Some(o))
        }
    })
}

fn escape_check(
    cell: &CellConfig,
    trace: &RunTrace,
    steps_per_epoch: usize,
) -> nht_core::Result<Option<EscapeCheck>> {
    let TaskSection::Linear(lin) = &cell.task else {
        return Ok(None);
    };
    let gradient_free = cell.run.decay_only && cell.optim.noise_sigma == 0.0;
    if !gradient_free || cell.schedule.kind != ScheduleKind::Constant || cell.optim.lambda == 0.0 {
        return Ok(None);
    }
    let norms = trace.total_norms();
    let v_start = norms[0];
    let pair = NormPair::new(v_start, lin.target_v_st)?;
    if !pair.hierarchy_holds() {
        return Ok(None);
    }
    let rate = cell
        .optim
        .kind
        .decay_only_rate(cell.optim.eta0, cell.optim.lambda);
    let predicted = escape_time(rate, &pair)?.steps;
    let measured = first_step_below(&norms, &trace.steps(), lin.target_v_st);
    let interval = cell.run.eval_every * steps_per_epoch;
    let within =
        measured.is_some_and(|m| m as u64 >= predicted && m as u64 - predicted < interval as u64);
    Ok(Some(EscapeCheck {
        v_start,
        v_target: lin.target_v_st,
        measured_step: measured,
        predicted_step: predicted,
        checkpoint_interval: interval,
        within_one_checkpoint: within,
    }))
}

/// Train and analyse one cell.
pub fn run_cell(cfg: &ExperimentConfig, key: &CellKey) -> nht_core::Result<CellRun> {
    let cell = CellConfig::resolve(cfg, key);
    let (task, oracles) = build_task(&cell.task)?;
    let init = match (cell.init, &oracles) {
        (InitMode::ShortcutOracle, Some(o)) => Some(linear_params(&o.theta_sc)),
        _ => None,
    };
    let spec = RunSpec {
        arch: &cell.arch,
        opt: &cell.optim,
        sched: &cell.schedule,
        run: &cell.run,
    };
    let trace = train_run(&task, &spec, init)?;
    let report = TransitionReport::from_trace(&trace, task.meta.chance, &cell.thresholds)?;
    let escape = escape_check(&cell, &trace, cell.run.steps_per_epoch(task.train.len()))?;

    let last = trace
        .last()
        .expect("a trace always holds the initial checkpoint");
    let norms = trace.total_norms();
    let peak = norms.iter().copied().fold(f64::MIN, f64::max);
    let final_metrics = FinalMetrics {
        train_loss: last.train_loss,
        train_acc: last.train_acc,
        acc_colored: finite(last.acc_colored),
        acc_clean: finite(last.acc_clean),
        acc_shortcut: finite(last.acc_shortcut),
        total_norm2: last.total_norm2,
        peak_norm2: peak,
    };
    let delay = match &escape {
        Some(e) => e.measured_step.map(|s| s as f64),
        None => report.t_transition.map(|s| s as f64),
    };
    let record = CellRecord {
        schema_version: SCHEMA_VERSION,
        cell_id: key.id(),
        config_hash: cell.hash(),
        key: *key,
        eta_lambda: cell.optim.eta0 * cell.optim.lambda,
        chance: task.meta.chance,
        status: CellStatus::Ok,
        error: None,
        final_metrics: Some(final_metrics),
        report: Some(report),
        escape,
        delay,
        log_norm_ratio: finite((peak / last.total_norm2).ln()),
        config: cell,
    };
    Ok(CellRun { trace, record })
}

/// Record for a cell whose run failed.
pub fn failed_record(cfg: &ExperimentConfig, key: &CellKey, err: &nht_core::Error) -> CellRecord {
    let cell = CellConfig::resolve(cfg, key);
    CellRecord {
        schema_version: SCHEMA_VERSION,
        cell_id: key.id(),
        config_hash: cell.hash(),
        key: *key,
        eta_lambda: cell.optim.eta0 * cell.optim.lambda,
        chance: chance_of(&cell.task),
        status: CellStatus::Failed,
        error: Some(err.to_string()),
        final_metrics: None,
        report: None,
        escape: None,
        delay: None,
        log_norm_ratio: None,
        config: cell,
    }
}

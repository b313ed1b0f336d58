//! Experiment configuration files.
//!
//! Configs are TOML. Only `[task] kind` is required; every other field falls back to
//! the default documented on it. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nht_core::diagnostics::ReportSettings;
use nht_core::tasks::{LinearHierarchyConfig, ModArithConfig, SpuriousTaskConfig};
use nht_core::trainer::{Activation, LRSchedule, MLPArch, OptimizerConfig, RunConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub optim: OptimizerConfig,
    #[serde(default)]
    pub schedule: LRSchedule,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub thresholds: ReportSettings,
    #[serde(default)]
    pub output: OutputSection,
}

/// The task, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSection {
    Spurious(SpuriousTaskConfig),
    Modular(ModArithConfig),
    Linear(LinearHierarchyConfig),
}

impl TaskSection {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSection::Spurious(_) => "spurious",
            TaskSection::Modular(_) => "modular",
            TaskSection::Linear(_) => "linear",
        }
    }

    /// Hidden widths used when the config leaves `arch.hidden` unset.
    pub fn default_hidden(&self) -> Vec<usize> {
        match self {
            TaskSection::Spurious(_) => vec![64, 64],
            TaskSection::Modular(_) => vec![128],
            TaskSection::Linear(_) => Vec::new(),
        }
    }

    pub fn validate(&self) -> nht_core::Result<()> {
        match self {
            TaskSection::Spurious(c) => c.validate(),
            TaskSection::Modular(c) => c.validate(),
            TaskSection::Linear(c) => c.validate(),
        }
    }
}

/// Network shape between the task's input and output widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    /// Hidden widths. Default: `[64, 64]` (spurious), `[128]` (modular), `[]` (linear).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Default `relu`.
    pub activation: Activation,
    /// Multiplier on the fan-in initialisation scale. Default 1.0.
    pub init_scale: f64,
    /// Bias terms. Default: true, except false for the linear task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self {
            hidden: None,
            activation: Activation::Relu,
            init_scale: 1.0,
            bias: None,
        }
    }
}

/// Where training starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Fan-in random initialisation seeded by the run seed.
    #[default]
    Random,
    /// The high-norm shortcut interpolator of the linear task.
    ShortcutOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Default 100.
    pub epochs: usize,
    /// Minibatch size; 0 means full batch. Default 64.
    pub batch_size: usize,
    /// Epochs between evaluations. Default 5.
    pub eval_every: usize,
    /// One run per seed. The task seed is offset by the same value. Default `[0]`.
    pub seeds: Vec<u64>,
    /// Zero the loss gradient so only decay and injected noise act. Default false.
    pub decay_only: bool,
    /// Default `random`.
    pub init: InitMode,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            eval_every: 5,
            seeds: vec![0],
            decay_only: false,
            init: InitMode::Random,
        }
    }
}

impl RunSection {
    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            seed,
            decay_only: self.decay_only,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    Lambda,
    Rho,
    /// Every (λ, ρ) pair; spurious task only.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Default `lambda`.
    pub axis: SweepAxis,
    /// Weight-decay values. Default `[0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0]`.
    pub lambdas: Vec<f64>,
    /// Shortcut correlations. Default `[0.5, 0.8, 0.95, 1.0]`.
    pub rhos: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Lambda,
            lambdas: vec![0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0],
            rhos: vec![0.5, 0.8, 0.95, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Default `nht-out`. Overridden by `NHT_OUT_DIR`, which `--out` overrides in turn.
    pub dir: PathBuf,
    /// Trace file format. Default `csv`.
    pub format: TraceFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("nht-out"),
            format: TraceFormat::Csv,
        }
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub format: Option<TraceFormat>,
    pub decay_only: bool,
}

fn strictly_ascending(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(CliError::config(format!("sweep.{name} must not be empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::config(format!(
            "sweep.{name} contains a non-finite value"
        )));
    }
    if let Some(w) = values.windows(2).find(|w| w[0] >= w[1]) {
        return Err(CliError::config(format!(
            "sweep.{name} must be sorted strictly ascending, but {} is followed by {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    /// A config with every section at its default.
    pub fn with_task(task: TaskSection) -> Self {
        Self {
            task,
            arch: ArchSection::default(),
            optim: OptimizerConfig::default(),
            schedule: LRSchedule::default(),
            run: RunSection::default(),
            sweep: SweepSection::default(),
            thresholds: ReportSettings::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seeds) = &o.seeds {
            self.run.seeds = seeds.clone();
        }
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        if o.decay_only {
            self.run.decay_only = true;
        }
        self.validate()
    }

    /// Resolved network shape for a task with the given input and output widths.
    pub fn arch_for(&self, input: usize, output: usize) -> MLPArch {
        let mut widths = vec![input];
        widths.extend(
            self.arch
                .hidden
                .clone()
                .unwrap_or_else(|| self.task.default_hidden()),
        );
        widths.push(output);
        MLPArch {
            layer_widths: widths,
            activation: self.arch.activation,
            init_scale: self.arch.init_scale,
            bias: self
                .arch
                .bias
                .unwrap_or(!matches!(self.task, TaskSection::Linear(_))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let core = |section: &str, e: nht_core::Error| CliError::config(format!("[{section}] {e}"));
        self.task.validate().map_err(|e| core("task", e))?;
        if self.arch.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err(CliError::config("[arch] hidden widths must be >= 1"));
        }
        self.arch_for(1, 1)
            .validate()
            .map_err(|e| core("arch", e))?;
        self.optim.validate().map_err(|e| core("optim", e))?;
        self.schedule
            .validate(self.optim.eta0)
            .map_err(|e| core("schedule", e))?;
        self.run
            .run_config(0)
            .validate()
            .map_err(|e| core("run", e))?;
        if self.run.seeds.is_empty() {
            return Err(CliError::config("[run] seeds must not be empty"));
        }
        let mut seeds = self.run.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.run.seeds.len() {
            return Err(CliError::config("[run] seeds must be distinct"));
        }
        if self.run.init == InitMode::ShortcutOracle {
            let TaskSection::Linear(lin) = &self.task else {
                return Err(CliError::config(
                    "[run] init = \"shortcut_oracle\" needs the linear task",
                ));
            };
            if self.arch_for(lin.d, 1) != nht_core::tasks::linear_arch(lin.d) {
                return Err(CliError::config(
                    "[run] init = \"shortcut_oracle\" needs a bias-free network without hidden layers",
                ));
            }
        }
        strictly_ascending("lambdas", &self.sweep.lambdas)?;
        strictly_ascending("rhos", &self.sweep.rhos)?;
        if self.sweep.lambdas.iter().any(|&l| l < 0.0) {
            return Err(CliError::config("[sweep] lambdas must be >= 0"));
        }
        if self.sweep.rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(CliError::config("[sweep] rhos must lie in [0, 1]"));
        }
        if self.sweep.axis != SweepAxis::Lambda && !matches!(self.task, TaskSection::Spurious(_)) {
            return Err(CliError::config(format!(
                "[sweep] axis {:?} varies rho, which only the spurious task has",
                self.sweep.axis
            )));
        }
        self.thresholds
            .validate()
            .map_err(|e| core("thresholds", e))?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_is_fully_defaulted() {
        let cfg = ExperimentConfig::from_toml("[task]\nkind = \"spurious\"\n").unwrap();
        assert_eq!(
            cfg,
            ExperimentConfig::with_task(TaskSection::Spurious(SpuriousTaskConfig::default()))
        );
        assert_eq!(cfg.arch_for(30, 10).layer_widths, vec![30, 64, 64, 10]);
    }

    #[test]
    fn linear_defaults_to_a_bias_free_linear_model() {
        let cfg = ExperimentConfig::from_toml("[task]\nkind = \"linear\"\n").unwrap();
        assert_eq!(cfg.arch_for(20, 1), nht_core::tasks::linear_arch(20));
    }

    #[test]
    fn unsorted_lambdas_are_rejected() {
        let text = "[task]\nkind = \"spurious\"\n[sweep]\nlambdas = [0.1, 0.01]\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("strictly ascending"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_name_their_location() {
        let text = "[task]\nkind = \"modular\"\n\n[optim]\nlearning_rate = 0.1\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");
        assert!(err.contains("line 5"), "{err}");
        let err = ExperimentConfig::from_toml("[task]\nkind = \"modular\"\nmodulos = 7\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("modulos"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg =
            ExperimentConfig::with_task(TaskSection::Linear(LinearHierarchyConfig::default()));
        cfg.run.seeds = vec![3, 1, 4];
        cfg.run.init = InitMode::ShortcutOracle;
        cfg.sweep.lambdas = vec![0.003, 0.1];
        cfg.optim.lambda = 0.123_456_789;
        cfg.arch.hidden = Some(vec![]);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rho_axes_need_the_spurious_task() {
        let text = "[task]\nkind = \"modular\"\n[sweep]\naxis = \"rho\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn oracle_init_needs_a_linear_model() {
        let text =
            "[task]\nkind = \"linear\"\n[arch]\nhidden = [4]\n[run]\ninit = \"shortcut_oracle\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
        let text = "[task]\nkind = \"spurious\"\n[run]\ninit = \"shortcut_oracle\"\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg =
            ExperimentConfig::from_toml("[task]\nkind = \"modular\"\n[output]\ndir = \"a\"\n")
                .unwrap();
        cfg.apply(&Overrides {
            seeds: Some(vec![7, 8]),
            out: Some("b".into()),
            format: Some(TraceFormat::Json),
            decay_only: true,
        })
        .unwrap();
        assert_eq!(cfg.run.seeds, vec![7, 8]);
        assert_eq!(cfg.output.dir, PathBuf::from("b"));
        assert_eq!(cfg.output.format, TraceFormat::Json);
        assert!(cfg.run.decay_only);
    }
}

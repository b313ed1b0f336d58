use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward_loss, score, Batch};
use super::optim::{
    adamw_step, sample_noise, sgd_wd_step, AdamHyper, AdamState, OptimizerConfig, OptimizerKind,
};
use super::params::{init_params, MLPArch, ParamVector};
use super::schedule::LRSchedule;
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream};
use crate::tasks::TaskBundle;

/// Loop settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `0` records only the initial checkpoint.
    pub epochs: usize,
    /// `0` or anything at least the training size means full batch.
    pub batch_size: usize,
    /// Evaluate every this many epochs (the final epoch is always evaluated).
    pub eval_every: usize,
    pub seed: u64,
    /// Force zero gradients so only weight decay and injected noise act.
    pub decay_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            eval_every: 5,
            seed: 0,
            decay_only: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(invalid("eval_every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        if n_train == 0 {
            return 0;
        }
        let b = self.effective_batch(n_train);
        n_train.div_ceil(b)
    }

    fn effective_batch(&self, n_train: usize) -> usize {
        if self.batch_size == 0 {
            n_train
        } else {
            self.batch_size.min(n_train)
        }
    }
}

/// One evaluation row of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub epoch: usize,
    /// Learning rate that the next update would use.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub total_norm2: f64,
    pub layer_norm2: Vec<f64>,
    pub acc_colored: f64,
    pub acc_clean: f64,
    pub acc_shortcut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunTrace {
    pub checkpoints: Vec<Checkpoint>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.checkpoints.first().map_or(0, |c| c.layer_norm2.len())
    }

    pub fn steps(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.step).collect()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.epoch).collect()
    }

    pub fn total_norms(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.total_norm2).collect()
    }

    pub fn layer_series(&self, layer: usize) -> Vec<f64> {
        self.checkpoints
            .iter()
            .map(|c| c.layer_norm2[layer])
            .collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.train_loss).collect()
    }

    pub fn train_accs(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.train_acc).collect()
    }

    pub fn clean_accs(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.acc_clean).collect()
    }

    pub fn shortcut_accs(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.acc_shortcut).collect()
    }

    pub fn colored_accs(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.acc_colored).collect()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    /// Steps strictly increasing and per-layer norms summing to the total.
    pub fn check_invariants(&self) -> Result<()> {
        for w in self.checkpoints.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Shape(format!(
                    "checkpoint steps not increasing: {} then {}",
                    w[0].step, w[1].step
                )));
            }
        }
        for c in &self.checkpoints {
            let sum: f64 = c.layer_norm2.iter().sum();
            if (sum - c.total_norm2).abs() > 1e-9 * c.total_norm2.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Shape(format!(
                    "layer norms sum to {sum} but total is {} at step {}",
                    c.total_norm2, c.step
                )));
            }
        }
        Ok(())
    }
}

/// Everything a run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec<'a> {
    pub arch: &'a MLPArch,
    pub opt: &'a OptimizerConfig,
    pub sched: &'a LRSchedule,
    pub run: &'a RunConfig,
}

fn checkpoint(
    spec: &RunSpec<'_>,
    task: &TaskBundle,
    train_batch: &Batch,
    params: &ParamVector,
    step: usize,
    epoch: usize,
    lr: f64,
) -> Result<Checkpoint> {
    let train_loss = if train_batch.is_empty() {
        f64::NAN
    } else {
        forward_loss(spec.arch, params, train_batch)?.0
    };
    let layer_norm2 = params.per_layer_norms();
    Ok(Checkpoint {
        step,
        epoch,
        lr,
        train_loss,
        train_acc: score(params, &task.train),
        total_norm2: layer_norm2.iter().sum(),
        layer_norm2,
        acc_colored: score(params, &task.test_colored),
        acc_clean: score(params, &task.test_clean),
        acc_shortcut: score(params, &task.test_shortcut),
    })
}

/// Train `spec.arch` on `task.train` and record a checkpoint at initialisation, every
/// `eval_every` epochs, and after the final epoch.
///
/// `init` replaces the seeded initialisation when given. The run is a pure function of
/// its inputs: initialisation, shuffling and injected noise each draw from their own
/// stream derived from `spec.run.seed`.
pub fn train_run(
    task: &TaskBundle,
    spec: &RunSpec<'_>,
    init: Option<ParamVector>,
) -> Result<RunTrace> {
    let RunSpec {
        arch,
        opt,
        sched,
        run,
    } = *spec;
    arch.validate()?;
    opt.validate()?;
    sched.validate(opt.eta0)?;
    run.validate()?;
    if arch.input_dim() != task.input_dim() || arch.output_dim() != task.output_width() {
        return Err(Error::Shape(format!(
            "architecture maps {} -> {} but the task needs {} -> {}",
            arch.input_dim(),
            arch.output_dim(),
            task.input_dim(),
            task.output_width()
        )));
    }

    let mut params = match init {
        Some(p) if p.matches_arch(arch) => p,
        Some(_) => {
            return Err(Error::Shape(
                "initial parameters do not match the architecture".into(),
            ))
        }
        None => init_params(arch, run.seed)?,
    };

    let n = task.train.len();
    let batch = run.effective_batch(n);
    let steps_per_epoch = run.steps_per_epoch(n);
    let horizon = (run.epochs * steps_per_epoch).max(1);
    let mut shuffle_rng = stream(run.seed, Stream::Shuffle);
    let mut noise_rng = stream(run.seed, Stream::Noise);
    let mut adam = (opt.kind == OptimizerKind::Adamw).then(|| AdamState::new(&params));
    let hyper = AdamHyper::from(opt);

    let full = Batch::from_dataset(&task.train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = RunTrace::default();
    let mut step = 0usize;
    trace.checkpoints.push(checkpoint(
        spec,
        task,
        &full,
        &params,
        0,
        0,
        sched.lr_at(0, opt.eta0, horizon),
    )?);

    for epoch in 1..=run.epochs {
        if batch < n {
            order.shuffle(&mut shuffle_rng);
        }
        for chunk in order.chunks(batch.max(1)) {
            let lr = sched.lr_at(step, opt.eta0, horizon);
            let grad = if run.decay_only {
                params.zeros_like()
            } else if chunk.len() == n {
                backward(arch, &params, &full)?.1
            } else {
                backward(arch, &params, &Batch::from_rows(&task.train, chunk))?.1
            };
            let noise = (opt.noise_sigma > 0.0)
                .then(|| sample_noise(&params, opt.noise_sigma, &mut noise_rng));
            match adam.as_mut() {
                None => sgd_wd_step(&mut params, &grad, lr, opt.lambda, noise.as_ref()),
                Some(state) => {
                    adamw_step(&mut params, &grad, state, lr, opt.lambda, hyper);
                    if let Some(xi) = &noise {
                        params
                            .values_mut()
                            .zip(xi.values())
                            .for_each(|(p, x)| *p += lr * x);
                    }
                }
            }
            step += 1;
            if !params.is_finite() {
                return Err(Error::Diverged(step));
            }
        }
        if epoch % run.eval_every == 0 || epoch == run.epochs {
            let lr = sched.lr_at(step, opt.eta0, horizon);
            trace
                .checkpoints
                .push(checkpoint(spec, task, &full, &params, step, epoch, lr)?);
        }
    }
    Ok(trace)
}

//! Synthetic tasks with a controllable norm hierarchy.
//!
//! Every task comes as a [`TaskBundle`]: one training split and three evaluation
//! splits. `test_colored` follows the training distribution with the shortcut always
//! correct, `test_clean` removes the shortcut block, and `test_shortcut` keeps the
//! shortcut block but replaces the structured block with uninformative filler.

mod io;
mod linear;
mod modular;
mod spurious;

pub use io::{read_bundle, write_bundle};
pub use linear::{
    gen_linear_hierarchy, linear_arch, linear_params, min_norm_interpolator, LinearHierarchyConfig,
    LinearOracles,
};
pub use modular::{gen_modular, is_prime, ModArithConfig};
pub use spurious::{gen_spurious, SpuriousTaskConfig};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes {
        labels: Vec<usize>,
        num_classes: usize,
    },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes {
                labels,
                num_classes,
            } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Width of the model output these targets require.
    pub fn output_width(&self) -> usize {
        match self {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Values(_) => 1,
        }
    }
}

/// Row-major examples plus targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * targets.len() {
            return Err(Error::Shape(format!(
                "{} input values do not form {} rows of width {}",
                inputs.len(),
                targets.len(),
                dim
            )));
        }
        Ok(Self {
            inputs,
            dim,
            targets,
        })
    }

    pub fn empty(dim: usize, targets: Targets) -> Self {
        Self {
            inputs: Vec::new(),
            dim,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// Inputs as an `n × dim` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.inputs)
    }

    /// Selected rows as a matrix, in the order given.
    pub fn gather_matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.dim, |r, c| {
            self.inputs[idx[r] * self.dim + c]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Spurious,
    Modular,
    Linear,
}

/// Generation metadata carried alongside the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub kind: TaskKind,
    /// Classes for classification tasks, 0 for regression.
    pub num_classes: usize,
    pub d_structured: usize,
    pub d_shortcut: usize,
    /// Configured shortcut correlation, where meaningful.
    pub rho: Option<f64>,
    /// Fraction of training rows whose shortcut agrees with the label.
    pub realised_correct_fraction: Option<f64>,
    /// Accuracy of an uninformed predictor under the task's metric.
    pub chance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub train: Dataset,
    pub test_colored: Dataset,
    pub test_clean: Dataset,
    pub test_shortcut: Dataset,
    pub meta: TaskMeta,
}

impl TaskBundle {
    pub fn input_dim(&self) -> usize {
        self.train.dim
    }

    pub fn output_width(&self) -> usize {
        self.train.targets.output_width()
    }
}

/// Gram–Schmidt helpers shared by the generators.
pub(crate) fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub(crate) fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
}

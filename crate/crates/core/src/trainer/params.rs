use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Dense network shape: `layer_widths[0]` inputs, `layer_widths.last()` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MLPArch {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Multiplier on the He standard deviation `sqrt(2 / fan_in)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl MLPArch {
    pub fn new(layer_widths: Vec<usize>) -> Self {
        Self {
            layer_widths,
            activation: Activation::Relu,
            init_scale: 1.0,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(invalid(
                "layer_widths",
                "need at least input and output widths",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(invalid("layer_widths", "every width must be >= 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid(
                "init_scale",
                format!("must be >= 0, got {}", self.init_scale),
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

/// One dense layer. `weight` is stored `fan_in × fan_out` so a batch forward is `X·W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    /// Empty when the architecture has no biases.
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn norm2(&self) -> f64 {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .map(|x| x * x)
            .sum()
    }
}

/// Parameters grouped by layer, θ = (θ⁽¹⁾, …, θ⁽ᴸ⁾).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layers: Vec<Layer>,
    pub layer_names: Vec<String>,
}

impl ParamVector {
    pub fn zeros(arch: &MLPArch) -> Self {
        let layers = arch
            .layer_widths
            .windows(2)
            .map(|w| Layer {
                weight: DMatrix::zeros(w[0], w[1]),
                bias: DVector::zeros(if arch.bias { w[1] } else { 0 }),
            })
            .collect();
        Self {
            layers,
            layer_names: (1..=arch.num_layers())
                .map(|i| format!("layer{i}"))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
            layer_names: self.layer_names.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// `‖θ⁽ℓ⁾‖²` for every layer.
    pub fn per_layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(Layer::norm2).collect()
    }

    /// `‖θ‖²`, accumulated as the sum of the per-layer norms.
    pub fn total_norm2(&self) -> f64 {
        self.per_layer_norms().iter().sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Inverse of [`ParamVector::to_flat`]; panics on a length mismatch.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        self.values_mut().zip(flat).for_each(|(d, s)| *d = *s);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    pub fn matches_arch(&self, arch: &MLPArch) -> bool {
        self.same_shape(&ParamVector::zeros(arch))
    }
}

/// He-style initialisation: weights `N(0, (scale·sqrt(2/fan_in))²)`, zero biases.
pub fn init_params(arch: &MLPArch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = stream(seed, Stream::Init);
    let mut params = ParamVector::zeros(arch);
    for layer in &mut params.layers {
        let std = arch.init_scale * (2.0 / layer.weight.nrows() as f64).sqrt();
        for w in layer.weight.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let arch = MLPArch::new(vec![5, 7, 3]);
        assert_eq!(
            init_params(&arch, 11).unwrap(),
            init_params(&arch, 11).unwrap()
        );
        assert_ne!(
            init_params(&arch, 11).unwrap(),
            init_params(&arch, 12).unwrap()
        );
    }

    #[test]
    fn parameter_count() {
        let arch = MLPArch::new(vec![4, 3, 2]);
        assert_eq!(arch.num_params(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(init_params(&arch, 0).unwrap().num_params(), 23);
    }

    #[test]
    fn zero_scale_gives_zero_norm() {
        let mut arch = MLPArch::new(vec![4, 3, 2]);
        arch.init_scale = 0.0;
        let p = init_params(&arch, 3).unwrap();
        assert_eq!(p.total_norm2(), 0.0);
    }

    #[test]
    fn init_variance_is_fan_in_scaled() {
        let arch = MLPArch::new(vec![200, 300]);
        let p = init_params(&arch, 5).unwrap();
        let mean_sq = p.layers[0].weight.iter().map(|w| w * w).sum::<f64>() / 60_000.0;
        assert!(
            (mean_sq - 2.0 / 200.0).abs() < 0.05 * 2.0 / 200.0,
            "{mean_sq}"
        );
    }

    #[test]
    fn per_layer_norms_examples() {
        let arch = MLPArch::new(vec![3, 4, 2, 2]);
        let mut p = ParamVector::zeros(&arch);
        assert_eq!(p.per_layer_norms(), vec![0.0, 0.0, 0.0]);
        p.layers[1].weight[(1, 0)] = 3.0;
        assert_eq!(p.per_layer_norms(), vec![0.0, 9.0, 0.0]);

        let q = init_params(&arch, 9).unwrap();
        let sum: f64 = q.per_layer_norms().iter().sum();
        let direct: f64 = q.values().map(|v| v * v).sum();
        assert!((sum - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn validation() {
        assert!(MLPArch::new(vec![3]).validate().is_err());
        assert!(MLPArch::new(vec![3, 0, 2]).validate().is_err());
        assert!(MLPArch::new(vec![3, 2]).validate().is_ok());
    }

    #[test]
    fn flat_round_trip() {
        let arch = MLPArch::new(vec![3, 4, 2]);
        let p = init_params(&arch, 1).unwrap();
        let mut q = ParamVector::zeros(&arch);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }
}

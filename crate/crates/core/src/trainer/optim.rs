//! Update rules.
//!
//! `sgd_wd_step` is the coupled rule `θ ← θ − η(g + 2λθ) + ηξ`. `adamw_step` uses
//! decoupled decay: the `ηλθ` term is applied outside the adaptive rescaling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdWd,
    Adamw,
}

impl OptimizerKind {
    /// Per-step rate at which a gradient-free, noise-free run shrinks `‖θ‖²`.
    pub fn decay_only_rate(self, eta: f64, lambda: f64) -> f64 {
        let q = match self {
            OptimizerKind::SgdWd => 1.0 - 2.0 * eta * lambda,
            OptimizerKind::Adamw => 1.0 - eta * lambda,
        };
        1.0 - q * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta0: f64,
    pub lambda: f64,
    /// Total standard deviation σ of the injected noise, `E‖ξ‖² = σ²`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adamw,
            eta0: 1e-3,
            lambda: 0.1,
            noise_sigma: 0.0,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(invalid("eta0", format!("must be > 0, got {}", self.eta0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid(
                "noise_sigma",
                format!("must be >= 0, got {}", self.noise_sigma),
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid(
                "adam_eps",
                format!("must be > 0, got {}", self.adam_eps),
            ));
        }
        Ok(())
    }
}

/// Isotropic Gaussian noise with `E‖ξ‖² = sigma²`, i.e. per-coordinate std `sigma/√d`.
pub fn sample_noise<R: Rng + ?Sized>(like: &ParamVector, sigma: f64, rng: &mut R) -> ParamVector {
    let mut xi = like.zeros_like();
    let std = sigma / (like.num_params() as f64).sqrt();
    for v in xi.values_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = std * z;
    }
    xi
}

/// `θ ← θ − η(g + 2λθ) + ηξ`, coordinate-wise.
pub fn sgd_wd_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    eta: f64,
    lambda: f64,
    noise: Option<&ParamVector>,
) {
    debug_assert!(params.same_shape(grad));
    let shrink = 1.0 - 2.0 * eta * lambda;
    for (p, g) in params.values_mut().zip(grad.values()) {
        *p = shrink * *p - eta * g;
    }
    if let Some(xi) = noise {
        for (p, x) in params.values_mut().zip(xi.values()) {
            *p += eta * x;
        }
    }
}

/// First and second moment estimates plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &ParamVector) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&OptimizerConfig> for AdamHyper {
    fn from(c: &OptimizerConfig) -> Self {
        Self {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// Decoupled-decay Adam:
///
/// ```text
/// θ ← θ(1 − ηλ)
/// m ← β₁m + (1 − β₁)g,  v ← β₂v + (1 − β₂)g²
/// θ ← θ − η·m̂/(√v̂ + ε)
/// ```
pub fn adamw_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    state: &mut AdamState,
    eta: f64,
    lambda: f64,
    h: AdamHyper,
) {
    debug_assert!(params.same_shape(grad) && params.same_shape(&state.m));
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powf(state.t as f64);
    let bc2 = 1.0 - h.beta2.powf(state.t as f64);
    let decay = 1.0 - eta * lambda;
    let it = params
        .values_mut()
        .zip(grad.values())
        .zip(state.m.values_mut().zip(state.v.values_mut()));
    for ((p, &g), (m, v)) in it {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = decay * *p - eta * m_hat / (v_hat.sqrt() + h.eps);
    }
}

//! The `theory` verb: closed-form quantities for one parameter setting.

use nht_core::theory::{
    emergence_budget_check, escape_time, exact_contraction_rate, exact_stationary_norm,
    lower_bound_time, stationary_norm, NormPair, TheoryParams,
};
use serde::Serialize;

use crate::cell::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy)]
pub struct TheoryQuery {
    pub eta: f64,
    pub lambda: f64,
    pub sigma2: f64,
    /// Effective contraction rate; `ηλ` when absent.
    pub gamma: Option<f64>,
    pub v_sc: f64,
    pub v_st: f64,
    /// Rate multiplier for the lower bound.
    pub c: f64,
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryAnswer {
    pub schema_version: u32,
    pub eta_lambda: f64,
    pub gamma_eff: f64,
    pub exact_rate: f64,
    pub stationary_norm: Option<f64>,
    pub exact_stationary_norm: Option<f64>,
    pub norm_ratio: f64,
    pub escape_steps: u64,
    pub exact_escape_steps: Option<u64>,
    pub lower_bound_steps: u64,
    pub hierarchy_violated: bool,
    pub emerges_within_budget: Option<bool>,
}

pub fn evaluate(q: &TheoryQuery) -> nht_core::Result<TheoryAnswer> {
    let p = TheoryParams {
        gamma_eff: q.gamma.unwrap_or(q.eta * q.lambda),
        ..TheoryParams::sgd(q.eta, q.lambda, q.sigma2)
    };
    p.validate()?;
    let norms = NormPair::new(q.v_sc, q.v_st)?;
    let escape = escape_time(p.gamma_eff, &norms)?;
    let exact_rate = exact_contraction_rate(&p);
    let exact = (p.eta_lambda() <= 0.5 && exact_rate > 0.0 && exact_rate < 1.0)
        .then(|| escape_time(exact_rate, &norms).map(|e| e.steps))
        .transpose()?;
    Ok(TheoryAnswer {
        schema_version: SCHEMA_VERSION,
        eta_lambda: p.eta_lambda(),
        gamma_eff: p.gamma_eff,
        exact_rate,
        stationary_norm: stationary_norm(&p).ok(),
        exact_stationary_norm: exact_stationary_norm(&p).ok(),
        norm_ratio: norms.ratio(),
        escape_steps: escape.steps,
        exact_escape_steps: exact,
        lower_bound_steps: lower_bound_time(&p, &norms, q.c)?.steps,
        hierarchy_violated: escape.hierarchy_violated,
        emerges_within_budget: q
            .budget
            .map(|b| emergence_budget_check(p.gamma_eff, &norms, b))
            .transpose()?,
    })
}

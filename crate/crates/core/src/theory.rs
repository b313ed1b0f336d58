//! Closed-form laws for norm contraction under weight decay.
//!
//! All escape times are exact geometric crossing times: the smallest integer `T`
//! with `(1 − γ)^T · V_sc ≤ V_st`, i.e. `ceil(ln(V_sc/V_st) / −ln(1 − γ))`. For
//! small `γ` this is the familiar `γ⁻¹ log(V_sc/V_st)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Scalar inputs to the contraction laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Step size η.
    pub eta: f64,
    /// Weight-decay coefficient λ.
    pub lambda: f64,
    /// Bound σ² on the second moment of the injected noise.
    pub sigma2: f64,
    /// Effective per-step contraction rate; `ηλ` for plain SGD.
    pub gamma_eff: f64,
    /// Smoothness constant `L`. When present the step-size condition `η ≤ λ/L`
    /// is asserted and checked by [`TheoryParams::validate`].
    pub smoothness_l: Option<f64>,
    /// Loss threshold ε₀ that marks arrival on the shortcut manifold.
    pub eps0: f64,
}

impl TheoryParams {
    /// SGD parameters with `γ_eff = ηλ` and no smoothness assertion.
    pub fn sgd(eta: f64, lambda: f64, sigma2: f64) -> Self {
        Self {
            eta,
            lambda,
            sigma2,
            gamma_eff: eta * lambda,
            smoothness_l: None,
            eps0: 1e-2,
        }
    }

    pub fn eta_lambda(&self) -> f64 {
        self.eta * self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(
                "lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(invalid(
                "sigma2",
                format!("must be >= 0, got {}", self.sigma2),
            ));
        }
        // Relative slack: gamma_eff is often computed as eta*lambda elsewhere.
        if self.gamma_eff < self.eta_lambda() * (1.0 - 1e-12) {
            return Err(invalid(
                "gamma_eff",
                format!(
                    "{} is below eta*lambda = {}",
                    self.gamma_eff,
                    self.eta_lambda()
                ),
            ));
        }
        if let Some(l) = self.smoothness_l {
            if !(l > 0.0) {
                return Err(invalid("smoothness_l", format!("must be > 0, got {l}")));
            }
            if self.eta > self.lambda / l {
                return Err(invalid(
                    "eta",
                    format!(
                        "step-size condition eta <= lambda/L violated ({} > {})",
                        self.eta,
                        self.lambda / l
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Characteristic squared norms of the shortcut and structured manifolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPair {
    pub v_sc: f64,
    pub v_st: f64,
}

impl NormPair {
    pub fn new(v_sc: f64, v_st: f64) -> Result<Self> {
        if !(v_sc > 0.0 && v_sc.is_finite()) {
            return Err(invalid("v_sc", format!("must be > 0, got {v_sc}")));
        }
        if !(v_st > 0.0 && v_st.is_finite()) {
            return Err(invalid("v_st", format!("must be > 0, got {v_st}")));
        }
        Ok(Self { v_sc, v_st })
    }

    /// `V_sc > V_st`. Callers are expected to report a `false` here.
    pub fn hierarchy_holds(&self) -> bool {
        self.v_sc > self.v_st
    }

    pub fn ratio(&self) -> f64 {
        self.v_sc / self.v_st
    }

    pub fn gap(&self) -> f64 {
        self.v_sc - self.v_st
    }
}

/// Which layer-wise rate formula to use for the `ηακ` term.
///
/// The single-factor form comes from the proposition statement, the doubled form
/// from squaring the per-layer update. Both are kept selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CapacityFactor {
    Single = 1,
    #[default]
    Double = 2,
}

impl CapacityFactor {
    pub fn value(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_int(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Single),
            2 => Ok(Self::Double),
            _ => Err(invalid(
                "capacity_factor",
                format!("must be 1 or 2, got {v}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRateSpec {
    /// Shortcut encoding capacity α ∈ [0, 1].
    pub alpha: f64,
    /// Curvature κ ≥ 0 of the loss along the layer's parameters.
    pub kappa: f64,
    pub capacity_factor: CapacityFactor,
}

impl LayerRateSpec {
    pub fn new(alpha: f64, kappa: f64, capacity_factor: CapacityFactor) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be >= 0, got {kappa}")));
        }
        Ok(Self {
            alpha,
            kappa,
            capacity_factor,
        })
    }
}

/// An escape time in optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escape {
    pub steps: u64,
    /// Set when `V_sc ≤ V_st`; `steps` is then 0.
    pub hierarchy_violated: bool,
}

/// One step of the Lyapunov upper bound `(1 − ηλ)V + η²σ²`.
pub fn lyapunov_upper_step(v: f64, p: &TheoryParams) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid("v", format!("must be >= 0, got {v}")));
    }
    let el = p.eta_lambda();
    if el > 1.0 {
        return Err(Error::VacuousBound(el));
    }
    Ok((1.0 - el) * v + p.eta * p.eta * p.sigma2)
}

/// One step of the exact expected recursion `(1 − 2ηλ)²V + η²σ²` for gradient-free
/// updates. Defined for `ηλ ≤ 1/2`.
pub fn exact_contraction_step(v: f64, p: &TheoryParams) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid("v", format!("must be >= 0, got {v}")));
    }
    let el = p.eta_lambda();
    if el > 0.5 {
        return Err(invalid("eta*lambda", format!("must be <= 1/2, got {el}")));
    }
    let q = 1.0 - 2.0 * el;
    Ok(q * q * v + p.eta * p.eta * p.sigma2)
}

/// Per-step rate `1 − (1 − 2ηλ)²` at which the exact recursion shrinks `V`.
pub fn exact_contraction_rate(p: &TheoryParams) -> f64 {
    let q = 1.0 - 2.0 * p.eta_lambda();
    1.0 - q * q
}

/// Fixed point `ησ²/λ` of the upper-bound recursion.
pub fn stationary_norm(p: &TheoryParams) -> Result<f64> {
    if p.lambda == 0.0 {
        return Err(Error::NoStationaryPoint);
    }
    Ok(p.eta * p.sigma2 / p.lambda)
}

/// Fixed point of the exact recursion: `η²σ² / (1 − (1 − 2ηλ)²) = ησ² / (4λ(1 − ηλ))`.
///
/// This is what a gradient-free noisy run actually settles at; it sits below
/// [`stationary_norm`] for every `ηλ < 3/4`.
pub fn exact_stationary_norm(p: &TheoryParams) -> Result<f64> {
    if p.lambda == 0.0 {
        return Err(Error::NoStationaryPoint);
    }
    let el = p.eta_lambda();
    if el >= 1.0 {
        return Err(Error::VacuousBound(el));
    }
    Ok(p.eta * p.sigma2 / (4.0 * p.lambda * (1.0 - el)))
}

fn crossing_steps(rate: f64, norms: &NormPair) -> Result<Escape> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidRate(rate));
    }
    if !norms.hierarchy_holds() {
        return Ok(Escape {
            steps: 0,
            hierarchy_violated: true,
        });
    }
    let k = norms.ratio().ln() / -(1.0 - rate).ln();
    // Absorb rounding when k lands on an integer.
    let steps = (k - 1e-9 * k.max(1.0)).ceil().max(1.0) as u64;
    Ok(Escape {
        steps,
        hierarchy_violated: false,
    })
}

/// Steps for geometric contraction at `gamma` to carry `V_sc` down to `V_st`.
pub fn escape_time(gamma: f64, norms: &NormPair) -> Result<Escape> {
    crossing_steps(gamma, norms)
}

/// Lower bound on the transition time of any first-order regularised method whose
/// per-step contraction is at most `c·ηλ`.
pub fn lower_bound_time(p: &TheoryParams, norms: &NormPair, c: f64) -> Result<Escape> {
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be > 0, got {c}")));
    }
    crossing_steps(c * p.eta_lambda(), norms)
}

/// `ηλ + f·η·α·κ` with `f` the configured capacity factor.
pub fn layerwise_gamma(p: &TheoryParams, spec: &LayerRateSpec) -> f64 {
    p.eta * p.lambda + spec.capacity_factor.value() * p.eta * spec.alpha * spec.kappa
}

pub fn layerwise_escape_time(
    p: &TheoryParams,
    spec: &LayerRateSpec,
    norms: &NormPair,
) -> Result<Escape> {
    escape_time(layerwise_gamma(p, spec), norms)
}

/// Whether the transition fits inside a training budget of `budget` steps.
pub fn emergence_budget_check(gamma: f64, norms: &NormPair, budget: u64) -> Result<bool> {
    Ok(escape_time(gamma, norms)?.steps <= budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Brute-force crossing time: iterate the contraction and count.
    fn iterate_crossing(rate: f64, v_sc: f64, v_st: f64) -> u64 {
        let mut v = v_sc;
        let mut t = 0;
        while v > v_st * (1.0 + 1e-12) {
            v *= 1.0 - rate;
            t += 1;
        }
        t
    }

    fn params(eta: f64, lambda: f64, sigma2: f64) -> TheoryParams {
        TheoryParams::sgd(eta, lambda, sigma2)
    }

    #[test]
    fn upper_step_examples() {
        // ηλ = 0.1 with η = 0.1, λ = 1.
        assert_relative_eq!(
            lyapunov_upper_step(100.0, &params(0.1, 1.0, 0.0)).unwrap(),
            90.0
        );
        // η²σ² = 0.01 with η = 0.1, σ² = 1.
        assert_relative_eq!(
            lyapunov_upper_step(0.0, &params(0.1, 1.0, 1.0)).unwrap(),
            0.01
        );
        // ηλ = 0.05, η²σ² = 0.5 with η = 0.5, λ = 0.1, σ² = 2.
        assert_relative_eq!(
            lyapunov_upper_step(100.0, &params(0.5, 0.1, 2.0)).unwrap(),
            95.5
        );
    }

    #[test]
    fn upper_step_rejects_vacuous_bound() {
        assert!(matches!(
            lyapunov_upper_step(1.0, &params(1.0, 1.5, 0.0)),
            Err(Error::VacuousBound(_))
        ));
    }

    #[test]
    fn exact_step_examples() {
        assert_relative_eq!(
            exact_contraction_step(100.0, &params(0.05, 1.0, 0.0)).unwrap(),
            81.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            exact_contraction_step(100.0, &params(0.05, 0.0, 0.0)).unwrap(),
            100.0
        );
        assert!(exact_contraction_step(1.0, &params(1.0, 0.6, 0.0)).is_err());
    }

    #[test]
    fn stationary_norm_examples() {
        assert_relative_eq!(
            stationary_norm(&params(0.01, 0.1, 1.0)).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        assert_eq!(stationary_norm(&params(0.01, 0.1, 0.0)).unwrap(), 0.0);
        assert_relative_eq!(
            stationary_norm(&params(0.001, 0.01, 4.0)).unwrap(),
            0.4,
            epsilon = 1e-15
        );
        assert_eq!(
            stationary_norm(&params(0.01, 0.0, 1.0)),
            Err(Error::NoStationaryPoint)
        );
    }

    #[test]
    fn exact_stationary_norm_is_the_recursion_fixed_point() {
        let p = params(0.05, 0.4, 3.0);
        let v = exact_stationary_norm(&p).unwrap();
        assert_relative_eq!(exact_contraction_step(v, &p).unwrap(), v, epsilon = 1e-12);
        assert!(v < stationary_norm(&p).unwrap());
    }

    #[test]
    fn escape_time_examples() {
        let e = std::f64::consts::E;
        let same = NormPair::new(2.0, 2.0).unwrap();
        let esc = escape_time(0.3, &same).unwrap();
        assert_eq!(esc.steps, 0);
        assert!(esc.hierarchy_violated);

        let ratio_e = NormPair::new(e, 1.0).unwrap();
        assert_eq!(iterate_crossing(0.01, e, 1.0), 100);
        assert_eq!(escape_time(0.01, &ratio_e).unwrap().steps, 100);

        assert_eq!(iterate_crossing(0.5, 4.0, 1.0), 2);
        assert_eq!(
            escape_time(0.5, &NormPair::new(4.0, 1.0).unwrap())
                .unwrap()
                .steps,
            2
        );

        assert!(matches!(
            escape_time(1.0, &ratio_e),
            Err(Error::InvalidRate(_))
        ));
        assert!(matches!(
            escape_time(0.0, &ratio_e),
            Err(Error::InvalidRate(_))
        ));
    }

    #[test]
    fn lower_bound_examples() {
        let e = std::f64::consts::E;
        let one = NormPair::new(3.0, 3.0).unwrap();
        assert_eq!(
            lower_bound_time(&params(0.1, 0.1, 0.0), &one, 2.0)
                .unwrap()
                .steps,
            0
        );

        let ratio_e = NormPair::new(e, 1.0).unwrap();
        let p = params(0.1, 0.1, 0.0);
        assert_eq!(
            lower_bound_time(&p, &ratio_e, 1.0).unwrap(),
            escape_time(p.eta_lambda(), &ratio_e).unwrap()
        );
        assert_eq!(iterate_crossing(0.02, e, 1.0), 50);
        assert_eq!(lower_bound_time(&p, &ratio_e, 2.0).unwrap().steps, 50);
    }

    #[test]
    fn layerwise_examples() {
        let p = params(0.01, 0.1, 0.0);
        let none = LayerRateSpec::new(0.0, 2.0, CapacityFactor::Double).unwrap();
        assert_relative_eq!(layerwise_gamma(&p, &none), p.eta_lambda());

        let spec = LayerRateSpec::new(0.5, 2.0, CapacityFactor::Double).unwrap();
        assert_relative_eq!(layerwise_gamma(&p, &spec), 0.021, epsilon = 1e-15);
        let single = LayerRateSpec::new(0.5, 2.0, CapacityFactor::Single).unwrap();
        assert_relative_eq!(layerwise_gamma(&p, &single), 0.011, epsilon = 1e-15);

        let e = std::f64::consts::E;
        let ratio_e = NormPair::new(e, 1.0).unwrap();
        assert_eq!(iterate_crossing(0.021, e, 1.0), 48);
        assert_eq!(
            layerwise_escape_time(&p, &spec, &ratio_e).unwrap().steps,
            48
        );
        assert_eq!(
            layerwise_escape_time(&p, &none, &ratio_e).unwrap(),
            escape_time(p.eta_lambda(), &ratio_e).unwrap()
        );

        let head = LayerRateSpec::new(0.8, 2.0, CapacityFactor::Double).unwrap();
        let first = LayerRateSpec::new(0.1, 2.0, CapacityFactor::Double).unwrap();
        let norms = NormPair::new(40.0, 1.0).unwrap();
        assert!(
            layerwise_escape_time(&p, &head, &norms).unwrap().steps
                < layerwise_escape_time(&p, &first, &norms).unwrap().steps
        );
    }

    #[test]
    fn layer_spec_validation() {
        assert!(LayerRateSpec::new(1.5, 1.0, CapacityFactor::Double).is_err());
        assert!(LayerRateSpec::new(0.5, -1.0, CapacityFactor::Double).is_err());
        assert!(CapacityFactor::from_int(3).is_err());
        assert_eq!(CapacityFactor::from_int(1).unwrap(), CapacityFactor::Single);
    }

    #[test]
    fn budget_check_examples() {
        let e = std::f64::consts::E;
        let same = NormPair::new(5.0, 5.0).unwrap();
        assert!(emergence_budget_check(0.01, &same, 0).unwrap());
        let ratio_e = NormPair::new(e, 1.0).unwrap();
        assert!(!emergence_budget_check(0.01, &ratio_e, 99).unwrap());
        assert!(emergence_budget_check(0.01, &ratio_e, 100).unwrap());

        // Flips false -> true exactly once as gamma grows.
        let mut flipped = false;
        for k in 1..200 {
            let ok = emergence_budget_check(k as f64 * 0.004, &ratio_e, 30).unwrap();
            if flipped {
                assert!(ok);
            }
            flipped |= ok;
        }
        assert!(flipped);
    }

    #[test]
    fn params_validation() {
        assert!(params(0.0, 0.1, 0.0).validate().is_err());
        assert!(params(0.1, -0.1, 0.0).validate().is_err());
        let mut p = params(0.1, 0.1, 0.0);
        p.gamma_eff = 0.001;
        assert!(p.validate().is_err());
        let mut a3 = params(0.01, 0.1, 0.0);
        a3.smoothness_l = Some(5.0);
        assert!(a3.validate().is_ok());
        a3.smoothness_l = Some(50.0);
        assert!(a3.validate().is_err());
    }

    #[test]
    fn upper_recursion_converges_monotonically_to_stationary_norm() {
        for &(sigma2, v0) in &[(2.0, 50.0), (0.0, 50.0)] {
            let p = params(0.1, 0.5, sigma2);
            let target = stationary_norm(&p).unwrap();
            let mut v = v0;
            for _ in 0..2000 {
                let next = lyapunov_upper_step(v, &p).unwrap();
                assert!(next <= v);
                v = next;
            }
            assert_relative_eq!(v, target, epsilon = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn exact_step_never_exceeds_upper_step(
            v in 0.0f64..1e6, eta in 1e-4f64..1.0, el in 0.0f64..=0.5, sigma2 in 0.0f64..100.0
        ) {
            let p = params(eta, el / eta, sigma2);
            let exact = exact_contraction_step(v, &p).unwrap();
            let upper = lyapunov_upper_step(v, &p).unwrap();
            prop_assert!(exact <= upper * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn escape_time_matches_brute_force(rate in 0.001f64..0.9, ratio in 1.0f64..1e4) {
            let norms = NormPair::new(ratio, 1.0).unwrap();
            let t = escape_time(rate, &norms).unwrap().steps;
            let brute = iterate_crossing(rate, ratio, 1.0);
            // The brute force carries its own rounding; allow one step either way.
            prop_assert!((t as i64 - brute as i64).abs() <= 1);
        }

        #[test]
        fn escape_time_monotone(r1 in 0.001f64..0.5, dr in 0.0f64..0.4, ratio in 1.0f64..1e3, dratio in 0.0f64..1e3) {
            let n1 = NormPair::new(ratio, 1.0).unwrap();
            let n2 = NormPair::new(ratio + dratio, 1.0).unwrap();
            let slow = escape_time(r1, &n1).unwrap().steps;
            prop_assert!(escape_time(r1 + dr, &n1).unwrap().steps <= slow);
            prop_assert!(escape_time(r1, &n2).unwrap().steps >= slow);
        }

        #[test]
        fn escape_is_zero_iff_no_gap(v_sc in 0.1f64..10.0, v_st in 0.1f64..10.0, rate in 0.01f64..0.9) {
            let norms = NormPair::new(v_sc, v_st).unwrap();
            let t = escape_time(rate, &norms).unwrap().steps;
            prop_assert_eq!(t == 0, v_sc <= v_st);
        }

        #[test]
        fn larger_c_gives_smaller_lower_bound(el in 0.001f64..0.2, ratio in 1.5f64..1e3, c in 1.05f64..4.0) {
            let p = params(0.1, el / 0.1, 0.0);
            let norms = NormPair::new(ratio, 1.0).unwrap();
            prop_assume!(c * el < 1.0);
            let base = lower_bound_time(&p, &norms, 1.0).unwrap().steps;
            let faster = lower_bound_time(&p, &norms, c).unwrap().steps;
            prop_assert!(faster <= base);
        }

        #[test]
        fn larger_alpha_escapes_first(a1 in 0.0f64..0.9, da in 0.05f64..0.1, kappa in 0.5f64..5.0) {
            let p = params(0.01, 0.1, 0.0);
            let lo = LayerRateSpec::new(a1, kappa, CapacityFactor::Double).unwrap();
            let hi = LayerRateSpec::new((a1 + da).min(1.0), kappa, CapacityFactor::Double).unwrap();
            prop_assert!(layerwise_gamma(&p, &hi) > layerwise_gamma(&p, &lo));
            // Ratio large enough that the rates differ by at least one whole step.
            let norms = NormPair::new(1e6, 1.0).unwrap();
            prop_assert!(
                layerwise_escape_time(&p, &hi, &norms).unwrap().steps
                    < layerwise_escape_time(&p, &lo, &norms).unwrap().steps
            );
        }
    }
}

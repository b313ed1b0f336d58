use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normalize, project_out, Dataset, Targets, TaskBundle, TaskKind, TaskMeta};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::trainer::{MLPArch, ParamVector};

/// Overparameterised linear regression with two known interpolators.
///
/// The first `d/2` coordinates form the structured block, the rest the shortcut block.
/// Inputs are `y·s + ε` where `s` is a fixed signal direction and `ε` lives in an
/// `n`-dimensional noise subspace per block orthogonal to `s`, so every interpolator
/// of the form `θ·s = 1` fits the data exactly.
///
/// In the separated layout the structured block carries `y·u/√v_st` and the shortcut
/// block `y·w/√v_sc`; `√v_st·u` and `√v_sc·w` then both interpolate, each using one
/// block only. In the entangled layout the signal is split evenly across both blocks,
/// and the shortcut oracle differs from the structured one only by a direction no
/// input ever touches, so the two are behaviourally identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearHierarchyConfig {
    pub d: usize,
    pub n: usize,
    pub n_test: usize,
    pub target_v_sc: f64,
    pub target_v_st: f64,
    pub noise_std: f64,
    pub entangled: bool,
    pub seed: u64,
}

impl Default for LinearHierarchyConfig {
    fn default() -> Self {
        Self {
            d: 20,
            n: 5,
            n_test: 200,
            target_v_sc: 10.0,
            target_v_st: 1.0,
            noise_std: 0.1,
            entangled: false,
            seed: 0,
        }
    }
}

impl LinearHierarchyConfig {
    pub fn d_structured(&self) -> usize {
        self.d / 2
    }

    pub fn d_shortcut(&self) -> usize {
        self.d - self.d / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleTargets(msg));
        if !(self.target_v_st > 0.0 && self.target_v_st.is_finite() && self.target_v_sc.is_finite())
        {
            return bad(format!(
                "target_v_st must be positive and finite, got {}",
                self.target_v_st
            ));
        }
        if self.target_v_sc < self.target_v_st {
            return bad(format!(
                "target_v_sc = {} is below target_v_st = {}; the shortcut solution must carry the larger norm",
                self.target_v_sc, self.target_v_st
            ));
        }
        if self.n == 0 || self.d <= self.n {
            return bad(format!(
                "need d > n >= 1 for a nontrivial interpolation manifold, got d = {}, n = {}",
                self.d, self.n
            ));
        }
        let need = self.n + 1 + usize::from(self.entangled && self.target_v_sc > self.target_v_st);
        if self.d_structured() < need || self.d_shortcut() < need {
            return bad(format!(
                "each block needs at least {need} coordinates to hold the signal and an {}-dimensional noise subspace, got {} and {}",
                self.n,
                self.d_structured(),
                self.d_shortcut()
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(crate::error::invalid(
                "noise_std",
                format!("must be >= 0, got {}", self.noise_std),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOracles {
    pub theta_sc: Vec<f64>,
    pub theta_st: Vec<f64>,
    /// Set when both targets coincide, so there is no norm gap to traverse.
    pub degenerate_gap: bool,
}

impl LinearOracles {
    pub fn norm2_sc(&self) -> f64 {
        self.theta_sc.iter().map(|x| x * x).sum()
    }

    pub fn norm2_st(&self) -> f64 {
        self.theta_st.iter().map(|x| x * x).sum()
    }
}

/// Bias-free single-layer network matching a linear task of width `d`.
pub fn linear_arch(d: usize) -> MLPArch {
    MLPArch {
        bias: false,
        ..MLPArch::new(vec![d, 1])
    }
}

/// Wrap a weight vector as parameters of [`linear_arch`].
pub fn linear_params(theta: &[f64]) -> ParamVector {
    let mut p = ParamVector::zeros(&linear_arch(theta.len()));
    p.set_flat(theta);
    p
}

fn random_unit_in(
    range: std::ops::Range<usize>,
    d: usize,
    avoid: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        for x in &mut v[range.clone()] {
            *x = rng.sample(StandardNormal);
        }
        project_out(&mut v, avoid);
        project_out(&mut v, avoid);
        if normalize(&mut v) > 1e-8 {
            return v;
        }
    }
}

struct Layout {
    d: usize,
    split: usize,
    signal: Vec<f64>,
    noise_s: Vec<Vec<f64>>,
    noise_c: Vec<Vec<f64>>,
    noise_std: f64,
}

impl Layout {
    fn row(
        &self,
        y: f64,
        structured: bool,
        shortcut: bool,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<f64>,
    ) {
        let mut x: Vec<f64> = self.signal.iter().map(|s| y * s).collect();
        for basis in [&self.noise_s, &self.noise_c] {
            for b in basis {
                let z: f64 = rng.sample(StandardNormal);
                x.iter_mut()
                    .zip(b)
                    .for_each(|(xi, bi)| *xi += self.noise_std * z * bi);
            }
        }
        if !structured {
            // Keep the structured noise but drop its signal.
            for i in 0..self.split {
                x[i] -= y * self.signal[i];
            }
        }
        if !shortcut {
            x[self.split..].iter_mut().for_each(|v| *v = 0.0);
        }
        debug_assert_eq!(x.len(), self.d);
        out.extend(x);
    }

    fn dataset(
        &self,
        n: usize,
        structured: bool,
        shortcut: bool,
        ys: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Dataset> {
        let mut x = Vec::with_capacity(n * self.d);
        for &y in &ys[..n] {
            self.row(y, structured, shortcut, rng, &mut x);
        }
        Dataset::new(x, self.d, Targets::Values(ys[..n].to_vec()))
    }
}

pub fn gen_linear_hierarchy(cfg: &LinearHierarchyConfig) -> Result<(TaskBundle, LinearOracles)> {
    cfg.validate()?;
    let (d, split) = (cfg.d, cfg.d_structured());
    let mut rng = stream(cfg.seed, Stream::Task);
    let u = random_unit_in(0..split, d, &[], &mut rng);
    let w = random_unit_in(split..d, d, &[], &mut rng);

    let mut taken = vec![u.clone(), w.clone()];
    let mut basis = |range: std::ops::Range<usize>, rng: &mut ChaCha8Rng| {
        (0..cfg.n)
            .map(|_| {
                let b = random_unit_in(range.clone(), d, &taken, rng);
                taken.push(b.clone());
                b
            })
            .collect::<Vec<_>>()
    };
    let noise_s = basis(0..split, &mut rng);
    let noise_c = basis(split..d, &mut rng);

    let (v_sc, v_st) = (cfg.target_v_sc, cfg.target_v_st);
    let (signal, theta_st, theta_sc) = if cfg.entangled {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let dir: Vec<f64> = u.iter().zip(&w).map(|(a, b)| h * (a + b)).collect();
        let signal: Vec<f64> = dir.iter().map(|x| x / v_st.sqrt()).collect();
        let theta_st: Vec<f64> = dir.iter().map(|x| x * v_st.sqrt()).collect();
        let mut theta_sc = theta_st.clone();
        if v_sc > v_st {
            let j = random_unit_in(split..d, d, &taken, &mut rng);
            let scale = (v_sc - v_st).sqrt();
            theta_sc
                .iter_mut()
                .zip(&j)
                .for_each(|(t, ji)| *t += scale * ji);
        }
        (signal, theta_st, theta_sc)
    } else {
        let signal: Vec<f64> = u
            .iter()
            .zip(&w)
            .map(|(a, b)| a / v_st.sqrt() + b / v_sc.sqrt())
            .collect();
        (
            signal,
            u.iter().map(|x| x * v_st.sqrt()).collect(),
            w.iter().map(|x| x * v_sc.sqrt()).collect(),
        )
    };

    let layout = Layout {
        d,
        split,
        signal,
        noise_s,
        noise_c,
        noise_std: cfg.noise_std,
    };
    let y_train: Vec<f64> = (0..cfg.n).map(|_| rng.sample(StandardNormal)).collect();
    let y_test: Vec<f64> = (0..cfg.n_test)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let train = layout.dataset(cfg.n, true, true, &y_train, &mut rng)?;
    let test_colored = layout.dataset(cfg.n_test, true, true, &y_test, &mut rng)?;
    let mut clean_x = test_colored.inputs.clone();
    for row in clean_x.chunks_mut(d) {
        row[split..].iter_mut().for_each(|v| *v = 0.0);
    }
    let test_clean = Dataset::new(clean_x, d, Targets::Values(y_test.clone()))?;
    let test_shortcut = layout.dataset(cfg.n_test, false, true, &y_test, &mut rng)?;

    let bundle = TaskBundle {
        train,
        test_colored,
        test_clean,
        test_shortcut,
        meta: TaskMeta {
            kind: TaskKind::Linear,
            num_classes: 0,
            d_structured: split,
            d_shortcut: d - split,
            rho: None,
            realised_correct_fraction: None,
            chance: 0.0,
            seed: cfg.seed,
        },
    };
    let oracles = LinearOracles {
        theta_sc,
        theta_st,
        degenerate_gap: v_sc <= v_st,
    };
    Ok((bundle, oracles))
}

/// Least-squares minimum-norm solution `X⁺y` of a regression dataset with `n ≤ d`
/// and full row rank.
pub fn min_norm_interpolator(data: &Dataset) -> Result<Vec<f64>> {
    let Targets::Values(y) = &data.targets else {
        return Err(Error::Shape(
            "minimum-norm interpolation needs real-valued targets".into(),
        ));
    };
    let n = data.len();
    let x = data.matrix();
    let svd = x.svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = n.max(data.dim) as f64 * f64::EPSILON * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if n == 0 || rank < n {
        return Err(Error::RankDeficient { rank, rows: n });
    }
    let u: &DMatrix<f64> = svd.u.as_ref().expect("requested U");
    let v_t: &DMatrix<f64> = svd.v_t.as_ref().expect("requested Vᵀ");
    let coeffs = DVector::from_iterator(
        rank,
        (u.tr_mul(&DVector::from_column_slice(y)))
            .iter()
            .zip(svd.singular_values.iter())
            .map(|(c, s)| c / s),
    );
    let theta = v_t.tr_mul(&coeffs);
    Ok(theta.iter().copied().collect())
}

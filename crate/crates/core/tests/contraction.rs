use nht_core::tasks::{
    gen_linear_hierarchy, gen_spurious, linear_arch, LinearHierarchyConfig, SpuriousTaskConfig,
};
use nht_core::theory::{exact_stationary_norm, stationary_norm, TheoryParams};
use nht_core::trainer::{
    train_run, LRSchedule, MLPArch, OptimizerConfig, OptimizerKind, RunConfig, RunSpec,
};
use nht_core::TaskBundle;

fn task() -> TaskBundle {
    gen_spurious(&SpuriousTaskConfig {
        num_classes: 3,
        d_structured: 6,
        d_shortcut: 3,
        rho: 0.9,
        n_train: 40,
        n_test: 12,
        noise_std: 0.3,
        seed: 2,
    })
    .unwrap()
}

fn decay_run(kind: OptimizerKind, eta: f64, lambda: f64) -> Vec<(usize, f64)> {
    let arch = MLPArch::new(vec![9, 7, 5, 3]);
    let opt = OptimizerConfig {
        kind,
        eta0: eta,
        lambda,
        ..Default::default()
    };
    let run = RunConfig {
        epochs: 30,
        batch_size: 16,
        eval_every: 3,
        seed: 4,
        decay_only: true,
    };
    let sched = LRSchedule::constant();
    let spec = RunSpec {
        arch: &arch,
        opt: &opt,
        sched: &sched,
        run: &run,
    };
    let trace = train_run(&task(), &spec, None).unwrap();
    trace
        .checkpoints
        .iter()
        .map(|c| (c.step, c.total_norm2))
        .collect()
}

fn assert_geometric(points: &[(usize, f64)], factor: f64) {
    let v0 = points[0].1;
    for &(step, v) in points {
        let want = v0 * factor.powi(step as i32);
        assert!(
            ((v - want) / want).abs() < 1e-9,
            "step {step}: {v} vs {want}"
        );
    }
}

#[test]
fn sgd_decay_only_shrinks_by_the_squared_factor() {
    for (eta, lambda) in [(0.01, 0.1), (0.1, 0.5), (0.5, 0.4)] {
        let q = 1.0 - 2.0 * eta * lambda;
        assert_geometric(&decay_run(OptimizerKind::SgdWd, eta, lambda), q * q);
    }
}

#[test]
fn adamw_decay_only_shrinks_by_the_decoupled_factor() {
    for (eta, lambda) in [(1e-3, 1.0), (0.01, 5.0)] {
        let q = 1.0 - eta * lambda;
        assert_geometric(&decay_run(OptimizerKind::Adamw, eta, lambda), q * q);
    }
}

#[test]
fn zero_decay_and_zero_noise_freezes_the_weights() {
    let points = decay_run(OptimizerKind::SgdWd, 0.1, 0.0);
    assert!(points.iter().all(|&(_, v)| v == points[0].1));
}

#[test]
fn noisy_decay_settles_at_the_exact_fixed_point() {
    let (bundle, _) = gen_linear_hierarchy(&LinearHierarchyConfig::default()).unwrap();
    let arch = linear_arch(bundle.input_dim());
    let (eta, lambda, sigma) = (0.1, 0.5, 1.0);
    let opt = OptimizerConfig {
        kind: OptimizerKind::SgdWd,
        eta0: eta,
        lambda,
        noise_sigma: sigma,
        ..Default::default()
    };
    let run = RunConfig {
        epochs: 20_000,
        batch_size: 0,
        eval_every: 1,
        seed: 9,
        decay_only: true,
    };
    let sched = LRSchedule::constant();
    let spec = RunSpec {
        arch: &arch,
        opt: &opt,
        sched: &sched,
        run: &run,
    };
    let norms = train_run(&bundle, &spec, None).unwrap().total_norms();
    let tail = &norms[norms.len() / 2..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;

    let p = TheoryParams::sgd(eta, lambda, sigma * sigma);
    let exact = exact_stationary_norm(&p).unwrap();
    assert!((mean / exact - 1.0).abs() < 0.05, "mean {mean} vs {exact}");
    assert!(mean < 0.5 * stationary_norm(&p).unwrap());
}

//! Fixtures shared by the benchmarks.

use nht_core::tasks::{gen_spurious, SpuriousTaskConfig};
use nht_core::trainer::{init_params, Batch, MLPArch, ParamVector};
use nht_core::TaskBundle;

/// A spurious-feature task at the default desk scale.
pub fn spurious_task() -> TaskBundle {
    gen_spurious(&SpuriousTaskConfig::default()).expect("default config is valid")
}

/// The default spurious network `[30, 64, 64, 10]` and its seed-0 parameters.
pub fn spurious_model() -> (MLPArch, ParamVector) {
    let arch = MLPArch::new(vec![30, 64, 64, 10]);
    let params = init_params(&arch, 0).expect("architecture is valid");
    (arch, params)
}

/// The first `n` training rows of `task` as one minibatch.
pub fn minibatch(task: &TaskBundle, n: usize) -> Batch {
    let idx: Vec<usize> = (0..n.min(task.train.len())).collect();
    Batch::from_rows(&task.train, &idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_fit_together() {
        let task = spurious_task();
        let (arch, params) = spurious_model();
        assert_eq!(arch.input_dim(), task.input_dim());
        assert_eq!(minibatch(&task, 64).len(), 64);
        assert!(params.total_norm2() > 0.0);
    }
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{normalize, Dataset, Targets, TaskBundle, TaskKind, TaskMeta};
use crate::error::{invalid, Result};
use crate::rng::{stream, Stream};

/// Classification with a structured block (noisy class prototypes) and a shortcut
/// block (a one-hot "colour" that matches the label with probability `rho`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousTaskConfig {
    pub num_classes: usize,
    pub d_structured: usize,
    pub d_shortcut: usize,
    pub rho: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SpuriousTaskConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            d_structured: 20,
            d_shortcut: 10,
            rho: 0.95,
            n_train: 1000,
            n_test: 500,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SpuriousTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "need at least 2 classes"));
        }
        if self.d_structured < self.num_classes || self.d_shortcut < self.num_classes {
            return Err(invalid(
                "d_structured/d_shortcut",
                format!(
                    "both blocks need at least num_classes = {} coordinates, got {} and {}",
                    self.num_classes, self.d_structured, self.d_shortcut
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(
                "rho",
                format!("must lie in [0, 1], got {}", self.rho),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid(
                "noise_std",
                format!("must be >= 0, got {}", self.noise_std),
            ));
        }
        if self.n_train == 0 {
            return Err(invalid("n_train", "must be >= 1"));
        }
        Ok(())
    }
}

/// Shortcut colour for a row: the true label with probability `rho`, otherwise a
/// uniformly drawn incorrect class.
fn draw_color(label: usize, classes: usize, rho: f64, rng: &mut ChaCha8Rng) -> usize {
    if rho >= 1.0 || rng.random::<f64>() < rho {
        return label;
    }
    let k = rng.random_range(0..classes - 1);
    if k >= label {
        k + 1
    } else {
        k
    }
}

struct Sampler<'a> {
    cfg: &'a SpuriousTaskConfig,
    prototypes: Vec<Vec<f64>>,
}

impl Sampler<'_> {
    fn dim(&self) -> usize {
        self.cfg.d_structured + self.cfg.d_shortcut
    }

    fn structured(&self, label: Option<usize>, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        for i in 0..self.cfg.d_structured {
            let z: f64 = rng.sample(StandardNormal);
            let base = label.map_or(0.0, |c| self.prototypes[c][i]);
            out.push(base + self.cfg.noise_std * z);
        }
    }

    fn shortcut(&self, color: Option<usize>, out: &mut Vec<f64>) {
        out.extend((0..self.cfg.d_shortcut).map(|i| if Some(i) == color { 1.0 } else { 0.0 }));
    }
}

pub fn gen_spurious(cfg: &SpuriousTaskConfig) -> Result<TaskBundle> {
    cfg.validate()?;
    let c = cfg.num_classes;
    let mut rng = stream(cfg.seed, Stream::Task);
    let prototypes = (0..c)
        .map(|_| {
            let mut v: Vec<f64> = (0..cfg.d_structured)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            normalize(&mut v);
            v
        })
        .collect();
    let s = Sampler { cfg, prototypes };
    let dim = s.dim();
    let targets = |labels: Vec<usize>| Targets::Classes {
        labels,
        num_classes: c,
    };

    let mut train_x = Vec::with_capacity(cfg.n_train * dim);
    let mut train_y = Vec::with_capacity(cfg.n_train);
    let mut correct = 0usize;
    for _ in 0..cfg.n_train {
        let label = rng.random_range(0..c);
        let color = draw_color(label, c, cfg.rho, &mut rng);
        correct += usize::from(color == label);
        s.structured(Some(label), &mut rng, &mut train_x);
        s.shortcut(Some(color), &mut train_x);
        train_y.push(label);
    }

    let test_y: Vec<usize> = (0..cfg.n_test).map(|i| i % c).collect();
    let (mut colored, mut clean, mut shortcut) = (Vec::new(), Vec::new(), Vec::new());
    for &label in &test_y {
        let start = colored.len();
        s.structured(Some(label), &mut rng, &mut colored);
        clean.extend_from_slice(&colored[start..]);
        s.shortcut(Some(label), &mut colored);
        s.shortcut(None, &mut clean);
        s.structured(None, &mut rng, &mut shortcut);
        s.shortcut(Some(label), &mut shortcut);
    }

    Ok(TaskBundle {
        train: Dataset::new(train_x, dim, targets(train_y))?,
        test_colored: Dataset::new(colored, dim, targets(test_y.clone()))?,
        test_clean: Dataset::new(clean, dim, targets(test_y.clone()))?,
        test_shortcut: Dataset::new(shortcut, dim, targets(test_y))?,
        meta: TaskMeta {
            kind: TaskKind::Spurious,
            num_classes: c,
            d_structured: cfg.d_structured,
            d_shortcut: cfg.d_shortcut,
            rho: Some(cfg.rho),
            realised_correct_fraction: Some(correct as f64 / cfg.n_train as f64),
            chance: 1.0 / c as f64,
            seed: cfg.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rho: f64) -> SpuriousTaskConfig {
        SpuriousTaskConfig {
            num_classes: 4,
            d_structured: 6,
            d_shortcut: 5,
            rho,
            n_train: 1000,
            n_test: 40,
            noise_std: 0.2,
            seed: 5,
        }
    }

    fn color_of(row: &[f64], d_s: usize) -> Option<usize> {
        row[d_s..].iter().position(|&v| v == 1.0)
    }

    #[test]
    fn rho_one_is_always_correct() {
        let b = gen_spurious(&cfg(1.0)).unwrap();
        assert_eq!(b.meta.realised_correct_fraction, Some(1.0));
    }

    #[test]
    fn realised_fraction_matches_a_recount() {
        let b = gen_spurious(&cfg(0.95)).unwrap();
        let Targets::Classes { labels, .. } = &b.train.targets else {
            panic!()
        };
        let hits = (0..b.train.len())
            .filter(|&i| color_of(b.train.row(i), 6) == Some(labels[i]))
            .count();
        assert_eq!(b.meta.realised_correct_fraction, Some(hits as f64 / 1000.0));
        let f = hits as f64 / 1000.0;
        assert!(
            (f - 0.95).abs() < 4.0 * (0.95f64 * 0.05 / 1000.0).sqrt(),
            "{f}"
        );
    }

    #[test]
    fn incorrect_colors_are_uniform() {
        let mut c = cfg(0.5);
        c.n_train = 100_000;
        c.num_classes = 5;
        c.d_structured = 5;
        c.d_shortcut = 5;
        let b = gen_spurious(&c).unwrap();
        let Targets::Classes { labels, .. } = &b.train.targets else {
            panic!()
        };
        // Offset of the wrong colour relative to the label, 1..=4.
        let mut counts = [0f64; 4];
        for i in 0..b.train.len() {
            let col = color_of(b.train.row(i), 5).unwrap();
            if col != labels[i] {
                counts[(col + 5 - labels[i]) % 5 - 1] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let chi2: f64 = counts
            .iter()
            .map(|k| (k - total / 4.0).powi(2) / (total / 4.0))
            .sum();
        // 3 degrees of freedom, 99.9th percentile.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn test_splits_follow_their_contracts() {
        let b = gen_spurious(&cfg(0.8)).unwrap();
        for i in 0..b.test_clean.len() {
            assert!(b.test_clean.row(i)[6..].iter().all(|&v| v == 0.0));
            assert_eq!(&b.test_clean.row(i)[..6], &b.test_colored.row(i)[..6]);
        }
        let Targets::Classes { labels, .. } = &b.test_colored.targets else {
            panic!()
        };
        for i in 0..b.test_colored.len() {
            assert_eq!(color_of(b.test_colored.row(i), 6), Some(labels[i]));
            assert_eq!(color_of(b.test_shortcut.row(i), 6), Some(labels[i]));
        }
        assert_eq!(b.test_colored.targets, b.test_shortcut.targets);
    }

    #[test]
    fn generation_is_pure() {
        assert_eq!(
            gen_spurious(&cfg(0.9)).unwrap(),
            gen_spurious(&cfg(0.9)).unwrap()
        );
    }

    #[test]
    fn rejects_small_blocks() {
        let mut c = cfg(0.9);
        c.d_shortcut = 3;
        assert!(gen_spurious(&c).is_err());
        c = cfg(1.5);
        assert!(gen_spurious(&c).is_err());
    }
}

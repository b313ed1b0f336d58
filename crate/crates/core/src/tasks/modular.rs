use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Targets, TaskBundle, TaskKind, TaskMeta};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream};

/// `(a + b) mod p` over all `p²` pairs with a seeded train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModArithConfig {
    pub modulus: u64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ModArithConfig {
    fn default() -> Self {
        Self {
            modulus: 29,
            train_fraction: 0.4,
            seed: 0,
        }
    }
}

impl ModArithConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modulus < 3 {
            return Err(invalid(
                "modulus",
                format!("must be >= 3, got {}", self.modulus),
            ));
        }
        if !is_prime(self.modulus) {
            return Err(Error::NotPrime(self.modulus));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(
                "train_fraction",
                format!("must lie in (0, 1), got {}", self.train_fraction),
            ));
        }
        Ok(())
    }

    /// Training rows: `floor(train_fraction · p²)`.
    pub fn train_size(&self) -> usize {
        let total = (self.modulus * self.modulus) as f64;
        (self.train_fraction * total).floor() as usize
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

fn encode(pairs: &[(usize, usize)], p: usize) -> Dataset {
    let mut x = vec![0.0; pairs.len() * 2 * p];
    let mut y = Vec::with_capacity(pairs.len());
    for (r, &(a, b)) in pairs.iter().enumerate() {
        x[r * 2 * p + a] = 1.0;
        x[r * 2 * p + p + b] = 1.0;
        y.push((a + b) % p);
    }
    let targets = Targets::Classes {
        labels: y,
        num_classes: p,
    };
    if pairs.is_empty() {
        Dataset::empty(2 * p, targets)
    } else {
        Dataset::new(x, 2 * p, targets).expect("encoding widths are consistent")
    }
}

pub fn gen_modular(cfg: &ModArithConfig) -> Result<TaskBundle> {
    cfg.validate()?;
    let p = cfg.modulus as usize;
    let mut pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
    pairs.shuffle(&mut stream(cfg.seed, Stream::Split));
    let (train, test) = pairs.split_at(cfg.train_size());
    let test_set = encode(test, p);
    Ok(TaskBundle {
        train: encode(train, p),
        test_colored: test_set.clone(),
        test_clean: test_set,
        test_shortcut: encode(&[], p),
        meta: TaskMeta {
            kind: TaskKind::Modular,
            num_classes: p,
            d_structured: 2 * p,
            d_shortcut: 0,
            rho: None,
            realised_correct_fraction: None,
            chance: 1.0 / p as f64,
            seed: cfg.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn decode(d: &Dataset, p: usize) -> HashSet<(usize, usize)> {
        (0..d.len())
            .map(|i| {
                let row = d.row(i);
                let a = row[..p].iter().position(|&v| v == 1.0).unwrap();
                let b = row[p..].iter().position(|&v| v == 1.0).unwrap();
                (a, b)
            })
            .collect()
    }

    #[test]
    fn pair_count_and_label() {
        let cfg = ModArithConfig {
            modulus: 5,
            train_fraction: 0.5,
            seed: 1,
        };
        let b = gen_modular(&cfg).unwrap();
        assert_eq!(b.train.len() + b.test_clean.len(), 25);
        let Targets::Classes { labels, .. } = &b.train.targets else {
            panic!()
        };
        for (i, &y) in labels.iter().enumerate() {
            let row = b.train.row(i);
            let a = row[..5].iter().position(|&v| v == 1.0).unwrap();
            let c = row[5..].iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(y, (a + c) % 5);
            if (a, c) == (3, 4) {
                assert_eq!(y, 2);
            }
        }
    }

    #[test]
    fn split_is_a_floor_partition() {
        let cfg = ModArithConfig {
            modulus: 7,
            train_fraction: 0.5,
            seed: 3,
        };
        let b = gen_modular(&cfg).unwrap();
        assert_eq!(b.train.len(), 24);
        let tr = decode(&b.train, 7);
        let te = decode(&b.test_clean, 7);
        assert_eq!(tr.len(), 24);
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.union(&te).count(), 49);
        assert!(b.test_shortcut.is_empty());
        assert_eq!(b.test_colored, b.test_clean);
    }

    #[test]
    fn rejects_composites() {
        let cfg = ModArithConfig {
            modulus: 9,
            train_fraction: 0.5,
            seed: 0,
        };
        assert_eq!(gen_modular(&cfg), Err(Error::NotPrime(9)));
        assert!(is_prime(29) && is_prime(3) && !is_prime(1) && !is_prime(4));
    }
}

//! Plain-text bundle format.
//!
//! ```text
//! # nht-bundle 1
//! # kind spurious
//! # num_classes 10
//! # d_structured 20
//! # d_shortcut 10
//! # rho 0.95
//! # realised_correct_fraction 0.948
//! # chance 0.1
//! # seed 0
//! # dim 30
//! # targets classes
//! split label x1 x2 ... x30
//! train 3 0.12 -0.4 ...
//! ```
//!
//! One whitespace-separated row per example: the split tag (`train`, `test_colored`,
//! `test_clean` or `test_shortcut`), the label (a class index, or a real value when
//! `targets values`), then the features. Optional metadata values are written as `-`.
//! Floats use Rust's shortest round-trip formatting, so a read reproduces the bundle
//! bit for bit.

use std::io::{BufRead, Write};

use super::{Dataset, Targets, TaskBundle, TaskKind, TaskMeta};
use crate::error::{Error, Result};

const SPLITS: [&str; 4] = ["train", "test_colored", "test_clean", "test_shortcut"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn kind_name(k: TaskKind) -> &'static str {
    match k {
        TaskKind::Spurious => "spurious",
        TaskKind::Modular => "modular",
        TaskKind::Linear => "linear",
    }
}

pub fn write_bundle<W: Write>(b: &TaskBundle, mut w: W) -> std::io::Result<()> {
    let m = &b.meta;
    writeln!(w, "# nht-bundle 1")?;
    writeln!(w, "# kind {}", kind_name(m.kind))?;
    writeln!(w, "# num_classes {}", m.num_classes)?;
    writeln!(w, "# d_structured {}", m.d_structured)?;
    writeln!(w, "# d_shortcut {}", m.d_shortcut)?;
    writeln!(w, "# rho {}", opt(m.rho))?;
    writeln!(
        w,
        "# realised_correct_fraction {}",
        opt(m.realised_correct_fraction)
    )?;
    writeln!(w, "# chance {}", m.chance)?;
    writeln!(w, "# seed {}", m.seed)?;
    writeln!(w, "# dim {}", b.train.dim)?;
    let classes = matches!(b.train.targets, Targets::Classes { .. });
    writeln!(
        w,
        "# targets {}",
        if classes { "classes" } else { "values" }
    )?;
    write!(w, "split label")?;
    for i in 1..=b.train.dim {
        write!(w, " x{i}")?;
    }
    writeln!(w)?;
    for (tag, data) in
        SPLITS
            .iter()
            .zip([&b.train, &b.test_colored, &b.test_clean, &b.test_shortcut])
    {
        for i in 0..data.len() {
            match &data.targets {
                Targets::Classes { labels, .. } => write!(w, "{tag} {}", labels[i])?,
                Targets::Values(v) => write!(w, "{tag} {}", v[i])?,
            }
            for x in data.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

struct Header {
    fields: Vec<(String, String)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("missing header field `{key}`"),
            })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Parse {
            line: 0,
            reason: format!("header field `{key}` has unparsable value `{raw}`"),
        })
    }

    fn parse_opt(&self, key: &str) -> Result<Option<f64>> {
        if self.get(key)? == "-" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }
}

pub fn read_bundle<R: BufRead>(r: R) -> Result<TaskBundle> {
    let mut header = Header { fields: Vec::new() };
    let mut rows: [(Vec<f64>, Vec<String>); 4] = Default::default();
    let mut dim = None;
    for (idx, line) in r.lines().enumerate() {
        let lineno = idx + 1;
        let perr = |reason: String| Error::Parse {
            line: lineno,
            reason,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| perr("header line needs a key and a value".into()))?;
            header.fields.push((k.to_string(), v.trim().to_string()));
            continue;
        }
        if line.starts_with("split ") || line.trim().is_empty() {
            continue;
        }
        let d = match dim {
            Some(d) => d,
            None => {
                let d: usize = header.parse("dim")?;
                dim = Some(d);
                d
            }
        };
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let slot = SPLITS
            .iter()
            .position(|s| *s == tag)
            .ok_or_else(|| perr(format!("unknown split tag `{tag}`")))?;
        let label = parts.next().ok_or_else(|| perr("missing label".into()))?;
        let before = rows[slot].0.len();
        for tok in parts {
            rows[slot].0.push(
                tok.parse()
                    .map_err(|_| perr(format!("bad feature value `{tok}`")))?,
            );
        }
        if rows[slot].0.len() - before != d {
            return Err(perr(format!(
                "expected {d} features, got {}",
                rows[slot].0.len() - before
            )));
        }
        rows[slot].1.push(label.to_string());
    }

    if header.get("nht-bundle")? != "1" {
        return Err(Error::Parse {
            line: 1,
            reason: "unsupported bundle version".into(),
        });
    }
    let dim: usize = header.parse("dim")?;
    let num_classes: usize = header.parse("num_classes")?;
    let classes = match header.get("targets")? {
        "classes" => true,
        "values" => false,
        other => {
            return Err(Error::Parse {
                line: 0,
                reason: format!("unknown target kind `{other}`"),
            })
        }
    };
    let kind = match header.get("kind")? {
        "spurious" => TaskKind::Spurious,
        "modular" => TaskKind::Modular,
        "linear" => TaskKind::Linear,
        other => {
            return Err(Error::Parse {
                line: 0,
                reason: format!("unknown task kind `{other}`"),
            })
        }
    };
    let mut sets = Vec::with_capacity(4);
    for (x, labels) in rows {
        let bad = |t: &str| Error::Parse {
            line: 0,
            reason: format!("bad label `{t}`"),
        };
        let targets = if classes {
            Targets::Classes {
                labels: labels
                    .iter()
                    .map(|t| t.parse().map_err(|_| bad(t)))
                    .collect::<Result<_>>()?,
                num_classes,
            }
        } else {
            Targets::Values(
                labels
                    .iter()
                    .map(|t| t.parse().map_err(|_| bad(t)))
                    .collect::<Result<_>>()?,
            )
        };
        sets.push(if targets.is_empty() {
            Dataset::empty(dim, targets)
        } else {
            Dataset::new(x, dim, targets)?
        });
    }
    let test_shortcut = sets.pop().unwrap();
    let test_clean = sets.pop().unwrap();
    let test_colored = sets.pop().unwrap();
    let train = sets.pop().unwrap();
    Ok(TaskBundle {
        train,
        test_colored,
        test_clean,
        test_shortcut,
        meta: TaskMeta {
            kind,
            num_classes,
            d_structured: header.parse("d_structured")?,
            d_shortcut: header.parse("d_shortcut")?,
            rho: header.parse_opt("rho")?,
            realised_correct_fraction: header.parse_opt("realised_correct_fraction")?,
            chance: header.parse("chance")?,
            seed: header.parse("seed")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{
        gen_linear_hierarchy, gen_modular, gen_spurious, LinearHierarchyConfig, ModArithConfig,
        SpuriousTaskConfig,
    };

    fn round_trip(b: &TaskBundle) -> TaskBundle {
        let mut buf = Vec::new();
        write_bundle(b, &mut buf).unwrap();
        read_bundle(buf.as_slice()).unwrap()
    }

    #[test]
    fn bundles_round_trip_exactly() {
        let s = gen_spurious(&SpuriousTaskConfig {
            n_train: 50,
            n_test: 20,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(round_trip(&s), s);
        let m = gen_modular(&ModArithConfig {
            modulus: 7,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(round_trip(&m), m);
        let (l, _) = gen_linear_hierarchy(&LinearHierarchyConfig::default()).unwrap();
        assert_eq!(round_trip(&l), l);
    }

    #[test]
    fn rows_are_tagged() {
        let m = gen_modular(&ModArithConfig {
            modulus: 3,
            train_fraction: 0.5,
            seed: 0,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_bundle(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("train ")).count(), 4);
        assert!(text.contains("split label x1 x2 x3 x4 x5 x6"));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let bad = "# nht-bundle 1\n# dim 2\n# targets values\ntrain 1.0 0.5\n";
        assert!(matches!(
            read_bundle(bad.as_bytes()),
            Err(Error::Parse { line: 4, .. })
        ));
    }
}

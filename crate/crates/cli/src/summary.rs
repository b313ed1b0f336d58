//! Aggregation of cell records into group statistics, delay fits, the phase matrix
//! and the prediction table.
//!
//! Everything here is a pure function of the records, so re-running it on the
//! `cell.json` files of a finished sweep reproduces the sweep's own summary.

use std::fmt::Write as _;

use nht_core::diagnostics::{delay_fit, DelayFit, RegimeLabel};
use serde::{Deserialize, Serialize};

use crate::cell::{CellRecord, SCHEMA_VERSION};

/// Slack allowed when checking that a sequence of means is monotone.
pub const MONOTONE_TOLERANCE: f64 = 0.01;
/// Minimum R² for the delay law to count as confirmed.
pub const DELAY_R2_MIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// All seeds of one (λ, ρ) coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub lambda: f64,
    pub rho: Option<f64>,
    pub cells: usize,
    pub failed: usize,
    pub clean_acc: Option<MeanStd>,
    pub train_acc: Option<MeanStd>,
    pub decay_from_peak: Option<MeanStd>,
    pub t_transition: Option<MeanStd>,
    pub reliance: Option<MeanStd>,
    pub separation: Option<MeanStd>,
    pub regimes: Vec<RegimeLabel>,
    pub modal_regime: Option<RegimeLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFits {
    /// Delay against `1/(ηλ)`.
    pub inverse_rate: Option<DelayFit>,
    /// Delay against `ln(peak norm / final norm)`.
    pub log_norm_ratio: Option<DelayFit>,
}

/// Mean final clean accuracy over λ (rows) × ρ (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMatrix {
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub clean_acc: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Confirmed,
    NotConfirmed,
    NotTested,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Confirmed => "confirmed",
            Status::NotConfirmed => "not confirmed",
            Status::NotTested => "not tested",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub name: String,
    pub status: Status,
    pub statistic: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub cells: usize,
    pub failed_cells: Vec<String>,
    pub groups: Vec<GroupStats>,
    pub delay_fits: DelayFits,
    pub phase: Option<PhaseMatrix>,
    pub predictions: Vec<Prediction>,
}

fn cmp_f64(a: f64, b: f64) -> std::cmp::Ordering {
    a.total_cmp(&b)
}

fn label_char(l: RegimeLabel) -> char {
    match l {
        RegimeLabel::Weak => 'W',
        RegimeLabel::Intermediate => 'I',
        RegimeLabel::Strong => 'S',
    }
}

/// Most frequent label; ties go to the weaker regime.
fn modal(labels: &[RegimeLabel]) -> Option<RegimeLabel> {
    [
        RegimeLabel::Weak,
        RegimeLabel::Intermediate,
        RegimeLabel::Strong,
    ]
    .into_iter()
    .map(|l| (labels.iter().filter(|&&x| x == l).count(), l))
    .filter(|&(n, _)| n > 0)
    .fold(
        None,
        |best: Option<(usize, RegimeLabel)>, (n, l)| match best {
            Some((bn, _)) if bn >= n => best,
            _ => Some((n, l)),
        },
    )
    .map(|(_, l)| l)
}

fn group(lambda: f64, rho: Option<f64>, members: &[&CellRecord]) -> GroupStats {
    let ok: Vec<&CellRecord> = members.iter().copied().filter(|r| r.is_ok()).collect();
    let metric = |f: &dyn Fn(&CellRecord) -> Option<f64>| {
        MeanStd::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
    };
    let regimes: Vec<RegimeLabel> = ok
        .iter()
        .filter_map(|r| r.report.as_ref().map(|x| x.regime))
        .collect();
    GroupStats {
        lambda,
        rho,
        cells: members.len(),
        failed: members.len() - ok.len(),
        clean_acc: metric(&|r| r.final_metrics.as_ref()?.acc_clean),
        train_acc: metric(&|r| r.final_metrics.as_ref().map(|m| m.train_acc)),
        decay_from_peak: metric(&|r| r.report.as_ref().map(|x| x.decay_from_peak)),
        t_transition: metric(&|r| r.report.as_ref()?.t_transition.map(|t| t as f64)),
        reliance: metric(&|r| r.report.as_ref()?.reliance_final),
        separation: metric(&|r| r.report.as_ref()?.separation_score),
        modal_regime: modal(&regimes),
        regimes,
    }
}

/// Pool groups by λ (or by ρ) and return (coordinate, values) pairs in order.
fn pooled(
    records: &[&CellRecord],
    by_rho: bool,
    f: impl Fn(&CellRecord) -> Option<f64>,
) -> Vec<(f64, Vec<f64>)> {
    let coord = |r: &CellRecord| {
        if by_rho {
            r.key.rho
        } else {
            Some(r.key.lambda)
        }
    };
    let mut coords: Vec<f64> = records.iter().filter_map(|r| coord(r)).collect();
    coords.sort_by(|a, b| cmp_f64(*a, *b));
    coords.dedup();
    coords
        .into_iter()
        .map(|c| {
            let vals = records
                .iter()
                .filter(|r| r.is_ok() && coord(r) == Some(c))
                .filter_map(|r| f(r))
                .collect();
            (c, vals)
        })
        .collect()
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn predictions(records: &[&CellRecord], groups: &[GroupStats]) -> Vec<Prediction> {
    let row = |name: &str, status: Status, statistic: String| Prediction {
        name: name.to_string(),
        status,
        statistic,
    };
    let ok: Vec<&CellRecord> = records.iter().copied().filter(|r| r.is_ok()).collect();
    let mut rows = Vec::new();

    // Regime labels by λ, pooled over ρ and seeds.
    let by_lambda: Vec<(f64, Option<RegimeLabel>)> = {
        let mut lambdas: Vec<f64> = ok.iter().map(|r| r.key.lambda).collect();
        lambdas.sort_by(|a, b| cmp_f64(*a, *b));
        lambdas.dedup();
        lambdas
            .into_iter()
            .map(|l| {
                let labels: Vec<RegimeLabel> = ok
                    .iter()
                    .filter(|r| r.key.lambda == l)
                    .filter_map(|r| r.report.as_ref().map(|x| x.regime))
                    .collect();
                (l, modal(&labels))
            })
            .collect()
    };
    let seq: Vec<RegimeLabel> = by_lambda.iter().filter_map(|(_, l)| *l).collect();
    let seq_str: String = seq.iter().map(|&l| label_char(l)).collect();
    rows.push(if seq.len() < 3 {
        row(
            "three-regime structure",
            Status::NotTested,
            "fewer than 3 weight-decay values".into(),
        )
    } else {
        let all = [
            RegimeLabel::Weak,
            RegimeLabel::Intermediate,
            RegimeLabel::Strong,
        ]
        .iter()
        .all(|l| seq.contains(l));
        let ordered = seq.windows(2).all(|w| w[0].rank() <= w[1].rank());
        let status = if all && ordered {
            Status::Confirmed
        } else {
            Status::NotConfirmed
        };
        row(
            "three-regime structure",
            status,
            format!("modal regimes by increasing lambda: {seq_str}"),
        )
    });

    let inter: Vec<f64> = ok
        .iter()
        .filter_map(|r| r.report.as_ref())
        .filter(|x| x.regime == RegimeLabel::Intermediate)
        .map(|x| x.decay_from_peak)
        .collect();
    rows.push(if ok.is_empty() {
        row(
            "peak-then-decay",
            Status::NotTested,
            "no successful cells".into(),
        )
    } else if inter.is_empty() {
        row(
            "peak-then-decay",
            Status::NotConfirmed,
            format!("0 of {} cells intermediate", ok.len()),
        )
    } else {
        let lo = inter.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = inter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row(
            "peak-then-decay",
            Status::Confirmed,
            format!(
                "{} of {} cells intermediate, decay {lo:.3} to {hi:.3}",
                inter.len(),
                ok.len()
            ),
        )
    });

    let decays: Vec<f64> = pooled(records, false, |r| {
        r.report.as_ref().map(|x| x.decay_from_peak)
    })
    .into_iter()
    .filter_map(|(_, v)| MeanStd::of(&v).map(|m| m.mean))
    .collect();
    rows.push(if decays.len() < 3 {
        row(
            "lambda-monotone contraction",
            Status::NotTested,
            "fewer than 3 weight-decay values".into(),
        )
    } else {
        let mono = decays.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOLERANCE);
        let status = if mono {
            Status::Confirmed
        } else {
            Status::NotConfirmed
        };
        row(
            "lambda-monotone contraction",
            status,
            format!("mean decay by increasing lambda: {}", fmt_list(&decays)),
        )
    });

    let clean: Vec<f64> = pooled(records, true, |r| r.final_metrics.as_ref()?.acc_clean)
        .into_iter()
        .filter_map(|(_, v)| MeanStd::of(&v).map(|m| m.mean))
        .collect();
    rows.push(if clean.len() < 2 {
        row(
            "rho-monotone difficulty",
            Status::NotTested,
            "fewer than 2 correlation values".into(),
        )
    } else {
        let mono = clean.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOLERANCE);
        let status = if mono {
            Status::Confirmed
        } else {
            Status::NotConfirmed
        };
        row(
            "rho-monotone difficulty",
            status,
            format!(
                "mean clean accuracy by increasing rho: {}",
                fmt_list(&clean)
            ),
        )
    });

    let multi: Vec<&GroupStats> = groups.iter().filter(|g| g.regimes.len() >= 2).collect();
    let unanimous = multi
        .iter()
        .filter(|g| g.regimes.iter().all(|&l| l == g.regimes[0]))
        .count();
    let multi = multi.len();
    rows.push(if multi == 0 {
        row(
            "reproducibility",
            Status::NotTested,
            "no coordinate has 2 or more seeds".into(),
        )
    } else {
        let status = if unanimous == multi {
            Status::Confirmed
        } else {
            Status::NotConfirmed
        };
        row(
            "reproducibility",
            status,
            format!("{unanimous} of {multi} multi-seed coordinates share one regime label"),
        )
    });

    rows.push(match inverse_rate_fit(&ok) {
        None => row(
            "delay scaling",
            Status::NotTested,
            "fewer than 3 cells with a measurable delay".into(),
        ),
        Some(fit) => {
            let status = if fit.r2 >= DELAY_R2_MIN {
                Status::Confirmed
            } else {
                Status::NotConfirmed
            };
            row(
                "delay scaling",
                status,
                format!(
                    "R2 = {:.4} against 1/(eta*lambda), slope {:.4}",
                    fit.r2, fit.slope
                ),
            )
        }
    });
    rows
}

fn inverse_rate_fit(ok: &[&CellRecord]) -> Option<DelayFit> {
    let pts: Vec<(f64, f64)> = ok
        .iter()
        .filter(|r| r.eta_lambda > 0.0)
        .filter_map(|r| Some((1.0 / r.eta_lambda, r.delay?)))
        .collect();
    delay_fit(&pts).ok()
}

fn log_ratio_fit(ok: &[&CellRecord]) -> Option<DelayFit> {
    let pts: Vec<(f64, f64)> = ok
        .iter()
        .filter_map(|r| Some((r.log_norm_ratio?, r.delay?)))
        .collect();
    delay_fit(&pts).ok()
}

/// Aggregate records; their order does not matter.
pub fn summarize(records: &[CellRecord]) -> SweepSummary {
    let mut sorted: Vec<&CellRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        cmp_f64(a.key.lambda, b.key.lambda)
            .then(cmp_f64(
                a.key.rho.unwrap_or(-1.0),
                b.key.rho.unwrap_or(-1.0),
            ))
            .then(a.key.seed.cmp(&b.key.seed))
    });

    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let (l, r) = (sorted[i].key.lambda, sorted[i].key.rho);
        let j = i + sorted[i..]
            .iter()
            .take_while(|x| x.key.lambda == l && x.key.rho == r)
            .count();
        groups.push(group(l, r, &sorted[i..j]));
        i = j;
    }

    let ok: Vec<&CellRecord> = sorted.iter().copied().filter(|r| r.is_ok()).collect();
    let mut lambdas_u: Vec<f64> = groups.iter().map(|g| g.lambda).collect();
    lambdas_u.dedup();
    let mut rhos: Vec<f64> = groups.iter().filter_map(|g| g.rho).collect();
    rhos.sort_by(|a, b| cmp_f64(*a, *b));
    rhos.dedup();
    let phase = (lambdas_u.len() >= 2 && rhos.len() >= 2).then(|| PhaseMatrix {
        clean_acc: lambdas_u
            .iter()
            .map(|&l| {
                rhos.iter()
                    .map(|&r| {
                        groups
                            .iter()
                            .find(|g| g.lambda == l && g.rho == Some(r))
                            .and_then(|g| g.clean_acc.map(|m| m.mean))
                    })
                    .collect()
            })
            .collect(),
        lambdas: lambdas_u.clone(),
        rhos: rhos.clone(),
    });

    SweepSummary {
        schema_version: SCHEMA_VERSION,
        cells: sorted.len(),
        failed_cells: sorted
            .iter()
            .filter(|r| !r.is_ok())
            .map(|r| r.cell_id.clone())
            .collect(),
        delay_fits: DelayFits {
            inverse_rate: inverse_rate_fit(&ok),
            log_norm_ratio: log_ratio_fit(&ok),
        },
        predictions: predictions(&sorted, &groups),
        groups,
        phase,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn aggregate_csv(s: &SweepSummary) -> String {
    let mut out = String::from(
        "lambda,rho,cells,failed,clean_acc_mean,clean_acc_std,train_acc_mean,train_acc_std,\
         decay_mean,decay_std,t_transition_mean,t_transition_std,reliance_mean,reliance_std,\
         separation_mean,separation_std,regimes,modal_regime\n",
    );
    for g in &s.groups {
        let _ = write!(out, "{},{},{},{}", g.lambda, opt(g.rho), g.cells, g.failed);
        for m in [
            g.clean_acc,
            g.train_acc,
            g.decay_from_peak,
            g.t_transition,
            g.reliance,
            g.separation,
        ] {
            let _ = write!(out, ",{},{}", opt(m.map(|m| m.mean)), opt(m.map(|m| m.std)));
        }
        let regimes: String = g.regimes.iter().map(|&l| label_char(l)).collect();
        let _ = writeln!(
            out,
            ",{regimes},{}",
            g.modal_regime.map_or_else(String::new, |l| l.to_string())
        );
    }
    out
}

pub fn phase_csv(p: &PhaseMatrix) -> String {
    let mut out = String::from("lambda");
    for r in &p.rhos {
        let _ = write!(out, ",rho={r}");
    }
    out.push('\n');
    for (l, row) in p.lambdas.iter().zip(&p.clean_acc) {
        let _ = write!(out, "{l}");
        for v in row {
            let _ = write!(out, ",{}", opt(*v));
        }
        out.push('\n');
    }
    out
}

pub fn markdown(s: &SweepSummary) -> String {
    let mut out = String::from("| prediction | status | statistic |\n|---|---|---|\n");
    for p in &s.predictions {
        let _ = writeln!(out, "| {} | {} | {} |", p.name, p.status, p.statistic);
    }
    if !s.failed_cells.is_empty() {
        let _ = writeln!(out, "\nFailed cells: {}", s.failed_cells.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn modal_label_breaks_ties_toward_weak() {
        use RegimeLabel::*;
        assert_eq!(modal(&[Strong, Weak]), Some(Weak));
        assert_eq!(modal(&[Strong, Intermediate, Strong]), Some(Strong));
        assert_eq!(modal(&[]), None);
    }
}

//! Measurements over run traces: peak-then-decay, regimes, reliance, separation,
//! transition times, layer ordering and delay-law fits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::trainer::RunTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    Weak,
    Intermediate,
    Strong,
}

impl RegimeLabel {
    /// Position along increasing weight decay.
    pub fn rank(self) -> u8 {
        match self {
            RegimeLabel::Weak => 0,
            RegimeLabel::Intermediate => 1,
            RegimeLabel::Strong => 2,
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegimeLabel::Weak => "Weak",
            RegimeLabel::Intermediate => "Intermediate",
            RegimeLabel::Strong => "Strong",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeThresholds {
    #[serde(default = "d_weak")]
    pub weak_decay_max: f64,
    #[serde(default = "d_strong")]
    pub strong_decay_min: f64,
    #[serde(default = "d_early")]
    pub early_peak_frac: f64,
}

fn d_weak() -> f64 {
    0.02
}
fn d_strong() -> f64 {
    0.40
}
fn d_early() -> f64 {
    0.05
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            weak_decay_max: d_weak(),
            strong_decay_min: d_strong(),
            early_peak_frac: d_early(),
        }
    }
}

impl RegimeThresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |name, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("must lie in [0, 1], got {v}")))
            }
        };
        unit("weak_decay_max", self.weak_decay_max)?;
        unit("strong_decay_min", self.strong_decay_min)?;
        unit("early_peak_frac", self.early_peak_frac)?;
        if self.weak_decay_max > self.strong_decay_min {
            return Err(invalid(
                "weak_decay_max",
                "must not exceed strong_decay_min",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDecay {
    pub peak_index: usize,
    /// `1 − last/max`.
    pub decay: f64,
}

/// Location of the maximum (earliest on ties) and the fractional drop from it to the end.
pub fn detect_peak_decay(series: &[f64]) -> Result<PeakDecay> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(bad) = series.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(invalid(
            "series",
            format!("values must be positive and finite, found {bad}"),
        ));
    }
    let mut peak_index = 0;
    for (i, &v) in series.iter().enumerate() {
        if v > series[peak_index] {
            peak_index = i;
        }
    }
    let decay = 1.0 - series[series.len() - 1] / series[peak_index];
    Ok(PeakDecay { peak_index, decay })
}

/// Weak when the decay stays below `weak_decay_max`; otherwise Strong when the decay
/// reaches `strong_decay_min` or the peak sits in the first `early_peak_frac` of the
/// run; Intermediate in between.
pub fn classify_regime(series: &[f64], t: &RegimeThresholds) -> Result<RegimeLabel> {
    if series.len() < 3 {
        return Err(Error::SeriesTooShort {
            need: 3,
            got: series.len(),
        });
    }
    let pd = detect_peak_decay(series)?;
    Ok(label_from(pd, series.len(), t))
}

fn label_from(pd: PeakDecay, len: usize, t: &RegimeThresholds) -> RegimeLabel {
    if pd.decay < t.weak_decay_max {
        RegimeLabel::Weak
    } else if pd.decay >= t.strong_decay_min
        || (pd.peak_index as f64) <= t.early_peak_frac * len as f64
    {
        RegimeLabel::Strong
    } else {
        RegimeLabel::Intermediate
    }
}

/// Behavioural shortcut reliance
/// `φ = e_s / (e_s + e_c)` with `e_s = max(acc_shortcut − chance, 0)` and
/// `e_c = max(acc_clean − chance, 0)`, and `φ = 0` when neither exceeds chance.
pub fn shortcut_reliance(acc_shortcut: f64, acc_clean: f64, chance: f64) -> f64 {
    let e_s = (acc_shortcut - chance).max(0.0);
    let e_c = (acc_clean - chance).max(0.0);
    if e_s + e_c > 0.0 {
        (e_s / (e_s + e_c)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let scale_x = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_y = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = |s: f64, scale: f64| s <= (1e-12 * scale).powi(2) * n;
    if tiny(sxx, scale_x) || tiny(syy, scale_y) {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between `phi` and the min-max normalised norm over the
/// checkpoints from the norm peak onwards. `None` when either series is constant there
/// or fewer than two post-peak points exist.
pub fn separation_score(phi: &[f64], norms: &[f64]) -> Result<Option<f64>> {
    if phi.len() != norms.len() {
        return Err(Error::LengthMismatch(phi.len(), norms.len()));
    }
    if norms.len() < 3 {
        return Err(Error::SeriesTooShort {
            need: 3,
            got: norms.len(),
        });
    }
    let peak = detect_peak_decay(norms)?.peak_index;
    let (p, v) = (&phi[peak..], &norms[peak..]);
    if p.len() < 2 || p.iter().any(|x| !x.is_finite()) {
        return Ok(None);
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Ok(None);
    }
    let normed: Vec<f64> = v.iter().map(|x| (x - lo) / (hi - lo)).collect();
    Ok(pearson(p, &normed))
}

/// First checkpoint step at which `acc` reaches `threshold` and stays there at the
/// next checkpoint.
pub fn transition_time(acc: &[f64], steps: &[usize], threshold: f64) -> Result<Option<usize>> {
    if acc.len() != steps.len() {
        return Err(Error::LengthMismatch(acc.len(), steps.len()));
    }
    Ok(acc
        .windows(2)
        .position(|w| w[0] >= threshold && w[1] >= threshold)
        .map(|i| steps[i]))
}

/// First checkpoint step at which the training loss is at most `eps0`.
pub fn shortcut_fit_time(train_loss: &[f64], steps: &[usize], eps0: f64) -> Option<usize> {
    train_loss.iter().position(|&l| l <= eps0).map(|i| steps[i])
}

/// First checkpoint step at which `norms` is at most `level`.
pub fn first_step_below(norms: &[f64], steps: &[usize], level: f64) -> Option<usize> {
    norms.iter().position(|&v| v <= level).map(|i| steps[i])
}

/// Steps between the first checkpoint with `φ ≤ 0.75` and the first later one with
/// `φ ≤ 0.25`.
pub fn phi_transition_width(phi: &[f64], steps: &[usize]) -> Option<usize> {
    let start = phi.iter().position(|&p| p <= 0.75)?;
    let end = phi[start..].iter().position(|&p| p <= 0.25)? + start;
    Some(steps[end] - steps[start])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Pearson correlation between predictor and delay.
    pub r: f64,
}

/// Ordinary least squares `T ≈ slope·x + intercept`. A constant response yields
/// `r2 = r = 0`.
pub fn delay_fit(points: &[(f64, f64)]) -> Result<DelayFit> {
    if points.len() < 3 || points.iter().any(|(x, t)| !x.is_finite() || !t.is_finite()) {
        return Err(Error::DegenerateFit);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let x_scale = points.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
    if sxx <= (1e-12 * x_scale).powi(2) * n {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (r2, r) = if syy > 0.0 {
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
            .sum();
        (
            (1.0 - ss_res / syy).clamp(0.0, 1.0),
            (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(DelayFit {
        points: points.to_vec(),
        slope,
        intercept,
        r2,
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub peak_epoch: usize,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEscapeReport {
    pub layers: Vec<LayerEntry>,
    /// `‖θ⁽ᴸ⁾‖² / ‖θ⁽¹⁾‖²` at every checkpoint.
    pub head_input_ratio: Vec<f64>,
    /// The last layer's decay from its peak strictly exceeds the first layer's.
    pub head_decays_faster: bool,
    /// The ratio at the end of the run is below its value at the head's peak.
    pub ratio_falls_after_head_peak: bool,
}

/// Peak-decay per layer plus the head/input ratio. `layers[ℓ]` is the norm series of
/// layer `ℓ`; `epochs` labels the checkpoints.
pub fn layer_escape_report(layers: &[Vec<f64>], epochs: &[usize]) -> Result<LayerEscapeReport> {
    if layers.len() < 2 {
        return Err(Error::SeriesTooShort {
            need: 2,
            got: layers.len(),
        });
    }
    let len = epochs.len();
    if let Some(bad) = layers.iter().find(|s| s.len() != len) {
        return Err(Error::LengthMismatch(bad.len(), len));
    }
    let pds = layers
        .iter()
        .map(|s| detect_peak_decay(s))
        .collect::<Result<Vec<_>>>()?;
    let (first, head) = (&layers[0], &layers[layers.len() - 1]);
    let ratio: Vec<f64> = head.iter().zip(first).map(|(h, f)| h / f).collect();
    let head_pd = pds[pds.len() - 1];
    Ok(LayerEscapeReport {
        head_decays_faster: head_pd.decay > pds[0].decay,
        ratio_falls_after_head_peak: ratio[len - 1] < ratio[head_pd.peak_index],
        layers: pds
            .iter()
            .map(|pd| LayerEntry {
                peak_epoch: epochs[pd.peak_index],
                decay: pd.decay,
            })
            .collect(),
        head_input_ratio: ratio,
    })
}

/// Knobs for [`TransitionReport::from_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    #[serde(default)]
    pub regime: RegimeThresholds,
    /// Training-loss level that counts as having fit the data.
    #[serde(default = "d_eps0")]
    pub eps0: f64,
    /// Clean accuracy that counts as the transition.
    #[serde(default = "d_clean")]
    pub clean_threshold: f64,
}

fn d_eps0() -> f64 {
    1e-2
}
fn d_clean() -> f64 {
    0.5
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            regime: RegimeThresholds::default(),
            eps0: d_eps0(),
            clean_threshold: d_clean(),
        }
    }
}

impl ReportSettings {
    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        if !(self.eps0 > 0.0) {
            return Err(invalid("eps0", format!("must be > 0, got {}", self.eps0)));
        }
        if !(self.clean_threshold > 0.0 && self.clean_threshold < 1.0) {
            return Err(invalid(
                "clean_threshold",
                format!("must lie in (0, 1), got {}", self.clean_threshold),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub regime: RegimeLabel,
    pub peak_epoch: usize,
    pub decay_from_peak: f64,
    pub t_sc: Option<usize>,
    pub t_transition: Option<usize>,
    /// `None` when the task has no shortcut evaluation set.
    pub reliance_final: Option<f64>,
    pub separation_score: Option<f64>,
    pub phi_transition_width: Option<usize>,
    pub layer_report: Option<LayerEscapeReport>,
}

impl TransitionReport {
    /// Per-checkpoint reliance series; `NaN` where an accuracy is undefined.
    pub fn phi_series(trace: &RunTrace, chance: f64) -> Vec<f64> {
        trace
            .checkpoints
            .iter()
            .map(|c| {
                if c.acc_shortcut.is_finite() && c.acc_clean.is_finite() {
                    shortcut_reliance(c.acc_shortcut, c.acc_clean, chance)
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    pub fn from_trace(trace: &RunTrace, chance: f64, s: &ReportSettings) -> Result<Self> {
        s.validate()?;
        if !(0.0..1.0).contains(&chance) {
            return Err(invalid(
                "chance",
                format!("must lie in [0, 1), got {chance}"),
            ));
        }
        let norms = trace.total_norms();
        let steps = trace.steps();
        let epochs = trace.epochs();
        let regime = classify_regime(&norms, &s.regime)?;
        let pd = detect_peak_decay(&norms)?;
        let phi = Self::phi_series(trace, chance);
        let reliance_final = phi.last().copied().filter(|p| p.is_finite());
        let layers: Vec<Vec<f64>> = (0..trace.num_layers())
            .map(|l| trace.layer_series(l))
            .collect();
        let layer_report = if layers.len() >= 2 && layers.iter().all(|s| s.iter().all(|v| *v > 0.0))
        {
            Some(layer_escape_report(&layers, &epochs)?)
        } else {
            None
        };
        Ok(Self {
            regime,
            peak_epoch: epochs[pd.peak_index],
            decay_from_peak: pd.decay,
            t_sc: shortcut_fit_time(&trace.train_losses(), &steps, s.eps0),
            t_transition: transition_time(&trace.clean_accs(), &steps, s.clean_threshold)?,
            reliance_final,
            separation_score: separation_score(&phi, &norms)?,
            phi_transition_width: phi_transition_width(&phi, &steps),
            layer_report,
        })
    }
}

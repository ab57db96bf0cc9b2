use serde::{Deserialize, Serialize};

use super::simulate::{series_peak, StopReason, TrajectoryRecord, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::kernel::RateThresholds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Monotonic runs never exceed `L(0)·(1 + tol_rise)`.
    pub tol_rise: f64,
    /// Catapult runs peak above `L(0)·rise_factor`.
    pub rise_factor: f64,
    pub divergence_threshold: f64,
    /// Monotonic runs end below `L(0)·converge_fraction`.
    pub converge_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_rise: 1e-3,
            rise_factor: 2.0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            converge_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Monotonic,
    Catapult,
    Divergent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionRegime {
    Monotonic,
    Catapult,
    Divergent,
    Unclassified,
}

impl DirectionRegime {
    pub fn is_catapult(self) -> bool {
        self == DirectionRegime::Catapult
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub eta: f64,
    pub initial_loss: f64,
    pub peak_loss: f64,
    pub peak_step: usize,
    pub final_loss: f64,
    /// First minus last finite value of the first eigenvalue series.
    pub kernel_drop: f64,
    /// One entry per tracked direction, in tracking order.
    pub per_direction: Vec<DirectionRegime>,
    pub thresholds: Option<RateThresholds>,
}

impl RegimeReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn classify_series(series: &[f64], diverged: bool, tol: &Tolerances) -> Option<Regime> {
    let start = *series.first()?;
    let (_, peak) = series_peak(series);
    let last = *series.last()?;
    // absolute slack so that exactly-zero series count as flat
    let slack = 1e-14 * start.abs().max(1e-300);
    if diverged || !peak.is_finite() || peak > tol.divergence_threshold {
        Some(Regime::Divergent)
    } else if peak > start * tol.rise_factor && last < start {
        Some(Regime::Catapult)
    } else if peak <= start * (1.0 + tol.tol_rise) + slack && last <= start * tol.converge_fraction + slack {
        Some(Regime::Monotonic)
    } else {
        None
    }
}

fn first_last_finite(series: &[f64]) -> Option<(f64, f64)> {
    let first = series.iter().copied().find(|v| v.is_finite())?;
    let last = series.iter().rev().copied().find(|v| v.is_finite())?;
    Some((first, last))
}

/// Monotonic / catapult / divergent label for a trajectory.
///
/// Divergent: the loss became non-finite or exceeded the divergence
/// threshold. Catapult: peak above `rise_factor·L(0)` and final below
/// `L(0)`. Monotonic: never above `(1 + tol_rise)·L(0)` and final below
/// `converge_fraction·L(0)`. Anything else is [`Error::Unclassified`].
/// Tracked projected losses get the same rules.
pub fn classify_regime(
    traj: &TrajectoryRecord,
    thresholds: Option<&RateThresholds>,
    tol: &Tolerances,
) -> Result<RegimeReport> {
    if traj.is_empty() {
        return Err(Error::Argument("empty trajectory".into()));
    }
    let diverged = matches!(
        traj.stop,
        Some(StopReason::Diverged { .. }) | Some(StopReason::NonFinite { .. })
    );
    let (peak_step, peak_loss) = traj.peak();
    let kernel_drop = traj
        .lambdas
        .first()
        .and_then(|s| first_last_finite(s))
        .map_or(f64::NAN, |(a, b)| a - b);
    let per_direction = traj
        .projected
        .iter()
        .map(|s| match classify_series(s, diverged, tol) {
            Some(Regime::Monotonic) => DirectionRegime::Monotonic,
            Some(Regime::Catapult) => DirectionRegime::Catapult,
            Some(Regime::Divergent) => DirectionRegime::Divergent,
            None => DirectionRegime::Unclassified,
        })
        .collect();
    let regime = classify_series(&traj.loss, diverged, tol).ok_or_else(|| {
        Error::Unclassified(format!(
            "eta={:e}: L(0)={:e}, peak={:e} at step {}, final={:e}, steps={}",
            traj.eta,
            traj.initial_loss(),
            peak_loss,
            peak_step,
            traj.final_loss(),
            traj.len()
        ))
    })?;
    Ok(RegimeReport {
        regime,
        eta: traj.eta,
        initial_loss: traj.initial_loss(),
        peak_loss,
        peak_step,
        final_loss: traj.final_loss(),
        kernel_drop,
        per_direction,
        thresholds: thresholds.cloned(),
    })
}

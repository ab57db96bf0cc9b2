use serde::{Deserialize, Serialize};

use super::simulate::{simulate, RecorderOptions, StopReason};
use crate::error::{Error, Result};
use crate::models::{Dataset, Trainable};

/// Bisection result for the largest convergent learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaMaxEstimate {
    /// Midpoint of the final bracket.
    pub estimate: f64,
    /// Largest probe that converged.
    pub lo: f64,
    /// Smallest probe that did not.
    pub hi: f64,
    /// Every probe in evaluation order with its outcome.
    pub probes: Vec<(f64, bool)>,
}

/// A run converges when it never diverges and ends below its initial loss.
fn converges<M: Trainable>(model: &M, data: &Dataset, eta: f64, steps: usize) -> Result<bool> {
    let rec = simulate(model, data, eta, &RecorderOptions::new(steps))?;
    let blew_up = matches!(rec.stop, Some(StopReason::Diverged { .. }) | Some(StopReason::NonFinite { .. }));
    Ok(!blew_up && rec.final_loss() < rec.initial_loss())
}

/// Bisects `bracket = (convergent η, non-convergent η)` down to relative
/// width 10⁻².
pub fn empirical_eta_max<M: Trainable>(
    model: &M,
    data: &Dataset,
    bracket: (f64, f64),
    steps: usize,
) -> Result<EtaMaxEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Argument(format!("invalid bracket ({lo}, {hi})")));
    }
    let mut probes = Vec::new();
    for (eta, expect) in [(lo, true), (hi, false)] {
        let ok = converges(model, data, eta, steps)?;
        probes.push((eta, ok));
        if ok != expect {
            return Err(Error::Argument(format!(
                "bracket end η={eta:e} {} but should {}",
                if ok { "converges" } else { "does not converge" },
                if expect { "converge" } else { "not converge" }
            )));
        }
    }
    while (hi - lo) / hi > 1e-2 {
        let mid = 0.5 * (lo + hi);
        let ok = converges(model, data, mid, steps)?;
        probes.push((mid, ok));
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EtaMaxEstimate {
        estimate: 0.5 * (lo + hi),
        lo,
        hi,
        probes,
    })
}

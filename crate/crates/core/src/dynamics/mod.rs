//! Gradient descent in parameter space, the closed-form recursions, and the
//! regime classifier.

pub mod closed_form;
pub mod eta_max;
pub mod regime;
pub mod simulate;

use nalgebra::DVector;

pub use closed_form::{
    confined_corrections, general_residual_corrections, gqm_dynamics_step, gqm_special_case_norm,
    multi_dynamics_step, scalar_dynamics_step, uvw_step, ResidualCorrections, ScalarDynamicsState,
};
pub use eta_max::{empirical_eta_max, EtaMaxEstimate};
pub use regime::{classify_regime, DirectionRegime, Regime, RegimeReport, Tolerances};
pub use simulate::{
    simulate, simulate_closed_form, train, EvalPoint, KernelTracking, RecorderOptions, StopReason, TrajectoryRecord,
};

use crate::error::{Error, Result};
use crate::models::{Dataset, Evaluation, Trainable};

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("learning rate must be positive and finite, got {eta}")))
    }
}

/// Applies `w ← w − η·Jᵀr` from an evaluation at the current parameters.
/// Returns the loss before the step.
pub(crate) fn descend_from<M: Trainable>(model: &mut M, eval: &M::Eval, labels: &DVector<f64>, eta: f64) -> Result<f64> {
    let r = eval.outputs() - labels;
    let direction = eval.pullback(&r);
    if let Some(index) = direction.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            quantity: "update",
            index,
        });
    }
    model.descend(&direction, eta);
    Ok(0.5 * r.norm_squared())
}

/// Full-batch gradient step on `½‖f − y‖²`. Returns the loss before the step.
///
/// A non-finite update is reported as [`Error::NonFinite`] and leaves the
/// model untouched.
pub fn gd_step<M: Trainable>(model: &mut M, data: &Dataset, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let eval = model.evaluate_batch(&data.inputs)?;
    descend_from(model, &eval, &data.labels, eta)
}

/// Gradient step on the sub-sampled loss over `batch`.
pub fn sgd_step<M: Trainable>(model: &mut M, data: &Dataset, eta: f64, batch: &[usize]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    gd_step(model, &data.subset(batch)?, eta)
}

/// `½⟨g − y, p̂⟩²` with `p̂` the normalized direction.
pub fn projected_loss(g: &DVector<f64>, y: &DVector<f64>, direction: &DVector<f64>) -> Result<f64> {
    let p = crate::linalg::normalized(direction).ok_or_else(|| Error::Argument("zero direction".into()))?;
    let proj = (g - y).dot(&p);
    Ok(0.5 * proj * proj)
}

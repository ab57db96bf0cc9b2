use nalgebra::{DMatrix, DVector};

use super::gqm::GeneralQuadraticModel;
use super::network::{AnchoredEval, AnchoredModel};
use crate::error::{Error, Result};

/// A batch evaluation: outputs plus enough structure for Jacobian products.
pub trait Evaluation {
    fn outputs(&self) -> &DVector<f64>;

    /// `Jᵀc` for output coefficients `c`.
    fn pullback(&self, coeffs: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self) -> DMatrix<f64>;

    /// `K = JJᵀ`.
    fn kernel(&self) -> DMatrix<f64>;

    /// `Σⱼ pⱼ·H(xⱼ)·Δ` for models with a closed-form constant Hessian.
    fn hessian_pullback(&self, _delta: &DVector<f64>, _p: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

/// Anything gradient descent can train.
pub trait Trainable: Clone + Send + Sync {
    type Eval: Evaluation;

    fn evaluate_batch(&self, inputs: &DMatrix<f64>) -> Result<Self::Eval>;

    /// Outputs only.
    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.evaluate_batch(inputs).map(|e| e.outputs().clone())
    }

    /// `w ← w − η·direction`.
    fn descend(&mut self, direction: &DVector<f64>, eta: f64);

    /// `‖w − w₀‖`.
    fn displacement(&self) -> f64;

    fn flat_params(&self) -> DVector<f64>;

    /// Caches whatever depends only on the training inputs.
    fn prepare(&mut self, _inputs: &DMatrix<f64>) -> Result<()> {
        Ok(())
    }
}

impl Evaluation for AnchoredEval {
    fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    fn pullback(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        AnchoredEval::pullback(self, coeffs)
    }

    fn jacobian(&self) -> DMatrix<f64> {
        AnchoredEval::jacobian(self)
    }

    fn kernel(&self) -> DMatrix<f64> {
        AnchoredEval::kernel(self)
    }

    fn hessian_pullback(&self, delta: &DVector<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
        AnchoredEval::hessian_pullback(self, delta, p)
    }
}

impl Trainable for AnchoredModel {
    type Eval = AnchoredEval;

    fn evaluate_batch(&self, inputs: &DMatrix<f64>) -> Result<AnchoredEval> {
        self.evaluate(inputs)
    }

    fn predict(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        AnchoredModel::predict(self, inputs)
    }

    fn descend(&mut self, direction: &DVector<f64>, eta: f64) {
        self.current_mut().axpy_flat(eta, direction);
    }

    fn displacement(&self) -> f64 {
        self.current().distance(self.anchor())
    }

    fn flat_params(&self) -> DVector<f64> {
        self.current().flatten()
    }

    fn prepare(&mut self, inputs: &DMatrix<f64>) -> Result<()> {
        self.ensure_cache(inputs)
    }
}

#[derive(Debug, Clone)]
pub struct GqmEval {
    outputs: DVector<f64>,
    jacobian: DMatrix<f64>,
    model: GeneralQuadraticModel,
    inputs: DMatrix<f64>,
}

impl Evaluation for GqmEval {
    fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    fn pullback(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        self.jacobian.tr_mul(coeffs)
    }

    fn jacobian(&self) -> DMatrix<f64> {
        self.jacobian.clone()
    }

    fn kernel(&self) -> DMatrix<f64> {
        &self.jacobian * self.jacobian.transpose()
    }

    fn hessian_pullback(&self, delta: &DVector<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
        let mut out = DVector::zeros(self.model.dim());
        for j in 0..self.inputs.nrows() {
            let x = self.inputs.row(j).transpose();
            out += self.model.curvature_apply(&x, delta).ok()? * (self.model.gamma * p[j]);
        }
        Some(out)
    }
}

impl Trainable for GeneralQuadraticModel {
    type Eval = GqmEval;

    fn evaluate_batch(&self, inputs: &DMatrix<f64>) -> Result<GqmEval> {
        let n = inputs.nrows();
        let mut outputs = DVector::zeros(n);
        let mut jacobian = DMatrix::zeros(n, self.dim());
        for j in 0..n {
            let x = inputs.row(j).transpose();
            outputs[j] = self.forward(&x)?;
            jacobian.set_row(j, &self.gradient(&x)?.transpose());
        }
        if let Some(index) = outputs.iter().position(|o| !o.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "model output",
                index,
            });
        }
        Ok(GqmEval {
            outputs,
            jacobian,
            model: self.clone(),
            inputs: inputs.clone(),
        })
    }

    fn descend(&mut self, direction: &DVector<f64>, eta: f64) {
        self.weights.axpy(-eta, direction, 1.0);
    }

    fn displacement(&self) -> f64 {
        (&self.weights - self.initial_weights()).norm()
    }

    fn flat_params(&self) -> DVector<f64> {
        self.weights.clone()
    }
}

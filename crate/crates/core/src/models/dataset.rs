use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Supervised training data: `n` inputs of dimension `d` with real labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::Argument("dataset needs n ≥ 1 and d ≥ 1".into()));
        }
        check_dim("labels", inputs.nrows(), labels.len())?;
        if let Some(index) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "input",
                index,
            });
        }
        if let Some(index) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "label",
                index,
            });
        }
        Ok(Self { inputs, labels })
    }

    /// One example.
    pub fn single(x: DVector<f64>, y: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, x.len(), x.as_slice()), DVector::from_element(1, y))
    }

    /// One-dimensional inputs.
    pub fn scalar(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(xs.len(), 1, xs), DVector::from_column_slice(ys))
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input(&self, j: usize) -> DVector<f64> {
        self.inputs.row(j).transpose()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.n()) {
            return Err(Error::Argument(format!("index {bad} out of range for n={}", self.n())));
        }
        let inputs = self.inputs.select_rows(indices);
        let labels = DVector::from_iterator(indices.len(), indices.iter().map(|&j| self.labels[j]));
        Self::new(inputs, labels)
    }

    /// Squared-loss `½‖g − y‖²`.
    pub fn loss(&self, outputs: &DVector<f64>) -> f64 {
        0.5 * (outputs - &self.labels).norm_squared()
    }

    /// Fraction of outputs whose sign matches the label (±1 labels).
    pub fn accuracy(&self, outputs: &DVector<f64>) -> f64 {
        let hits = outputs
            .iter()
            .zip(self.labels.iter())
            .filter(|(o, y)| (**o >= 0.0) == (**y >= 0.0))
            .count();
        hits as f64 / self.n() as f64
    }

    /// Checks the one-dimensional assumption: d = 1 and some input nonzero.
    pub fn require_one_dimensional(&self) -> Result<()> {
        if self.d() != 1 {
            return Err(Error::Argument(format!("expected d = 1 data, got d = {}", self.d())));
        }
        if self.inputs.iter().all(|&x| x == 0.0) {
            return Err(Error::Assumption("all inputs are zero".into()));
        }
        Ok(())
    }
}

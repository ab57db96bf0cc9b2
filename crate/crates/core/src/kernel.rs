//! Tangent kernels, spectra and learning-rate thresholds.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normalized, symmetric_eigen, SortedEigen};
use crate::models::{Dataset, Evaluation, Trainable};

/// Relative eigenvalue floor used for rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Kernel matrix at one step, with its spectrum in descending order.
#[derive(Debug, Clone)]
pub struct TangentKernelSnapshot {
    pub k: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub step: usize,
}

impl TangentKernelSnapshot {
    pub fn from_matrix(k: DMatrix<f64>, step: usize) -> Result<Self> {
        for j in 0..k.nrows() {
            if !k[(j, j)].is_finite() {
                return Err(Error::NonFinite {
                    quantity: "gradient",
                    index: j,
                });
            }
        }
        let SortedEigen { values, vectors } = symmetric_eigen(&k);
        Ok(Self {
            k,
            eigenvalues: values,
            eigenvectors: vectors,
            step,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn eigenvector(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// Number of eigenvalues above `RANK_TOL · λ_max`.
    pub fn numerical_rank(&self) -> usize {
        let floor = RANK_TOL * self.lambda_max().max(0.0);
        self.eigenvalues.iter().filter(|&&l| l > floor).count()
    }
}

/// Kernel of `model` on the inputs of `data`.
pub fn tangent_kernel<M: Trainable>(model: &M, data: &Dataset) -> Result<TangentKernelSnapshot> {
    let eval = model.evaluate_batch(&data.inputs)?;
    TangentKernelSnapshot::from_matrix(eval.kernel(), 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionRates {
    pub eigenvalue: f64,
    pub eta_critical: f64,
    pub eta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateThresholds {
    pub eta_critical: f64,
    pub eta_max_estimate: f64,
    pub per_direction: Vec<DirectionRates>,
}

impl RateThresholds {
    pub fn from_eigenvalues(eigenvalues: &[f64]) -> Result<Self> {
        let lambda_max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(Error::DegenerateKernel(lambda_max));
        }
        let floor = 1e-10 * lambda_max;
        let mut per_direction: Vec<_> = eigenvalues
            .iter()
            .filter(|&&l| l > floor)
            .map(|&l| DirectionRates {
                eigenvalue: l,
                eta_critical: 2.0 / l,
                eta_max: 4.0 / l,
            })
            .collect();
        per_direction.sort_by(|a, b| b.eigenvalue.total_cmp(&a.eigenvalue));
        Ok(Self {
            eta_critical: 2.0 / lambda_max,
            eta_max_estimate: 4.0 / lambda_max,
            per_direction,
        })
    }
}

/// `η_c = 2/λ_max`, `η_max ≈ 4/λ_max`, and the same pair per eigenvalue.
pub fn critical_lr(snapshot: &TangentKernelSnapshot) -> Result<RateThresholds> {
    RateThresholds::from_eigenvalues(&snapshot.eigenvalues)
}

/// Sign-masked inputs `(p₁, p₂)` for one-dimensional data.
///
/// `p₁ᵢ = xᵢ` where `xᵢ > 0` and `p₂ᵢ = xᵢ` where `xᵢ < 0`, zero elsewhere.
/// Both are eigenvectors of the tangent kernel for every parameter value, and
/// the kernel has rank at most two.
pub fn rank2_eigenstructure(data: &Dataset) -> Result<(DVector<f64>, DVector<f64>)> {
    data.require_one_dimensional()?;
    let x = data.inputs.column(0);
    let p1 = x.map(|v| if v > 0.0 { v } else { 0.0 });
    let p2 = x.map(|v| if v < 0.0 { v } else { 0.0 });
    Ok((p1, p2))
}

/// The sign-masked directions of one-dimensional data, normalized and
/// ordered by their eigenvalue `‖Jᵀp̂‖²` at `model` (largest first). A
/// direction with no support is left out.
pub fn ordered_rank2_directions<M: Trainable>(model: &M, data: &Dataset) -> Result<Vec<(f64, DVector<f64>)>> {
    let (p1, p2) = rank2_eigenstructure(data)?;
    let eval = model.evaluate_batch(&data.inputs)?;
    let mut dirs: Vec<(f64, DVector<f64>)> = [p1, p2]
        .into_iter()
        .filter_map(|p| normalized(&p))
        .map(|p| (eval.pullback(&p).norm_squared(), p))
        .collect();
    dirs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(dirs)
}

/// High-probability band for the initial top eigenvalue.
///
/// One example: `[‖x‖²/(2d), 3‖x‖²/(2d)]`. One-dimensional data with n > 1:
/// `[M/2, 3M/2]` with `M = max(‖p₁‖², ‖p₂‖²)`.
pub fn kernel_scale_bounds(data: &Dataset) -> Result<(f64, f64)> {
    if data.n() == 1 {
        let s = data.input(0).norm_squared() / data.d() as f64;
        return Ok((0.5 * s, 1.5 * s));
    }
    if data.d() != 1 {
        return Err(Error::Argument(format!(
            "kernel scale band for n > 1 needs d = 1, got d = {}",
            data.d()
        )));
    }
    let (p1, p2) = rank2_eigenstructure(data)?;
    let m = p1.norm_squared().max(p2.norm_squared());
    Ok((0.5 * m, 1.5 * m))
}

/// Writes `step,lambda1,…,lambdaK` rows.
pub fn write_eigenvalue_csv(path: &Path, snapshots: &[TangentKernelSnapshot], k: usize) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((1..=k).map(|i| format!("lambda{i}")))
        .collect();
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for s in snapshots {
        let mut row = vec![s.step.to_string()];
        row.extend((0..k).map(|i| s.eigenvalues.get(i).map_or(String::new(), |l| format!("{l:e}"))));
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

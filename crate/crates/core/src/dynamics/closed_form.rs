//! Closed-form recursions for the residual and the tangent kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::rank2_eigenstructure;
use crate::models::{Curvature, Dataset, Evaluation, FeatureMap, GeneralQuadraticModel, Trainable};

/// One gradient-descent step of a single-example quadratic model, in terms of
/// the output `g` and the kernel `λ`.
///
/// `coupling` is `‖x‖²/(md)`. The kernel correction is evaluated in the
/// product form `4(g−y)g − ηλ(g−y)²`, which stays regular at `g = y`.
pub fn scalar_dynamics_step(g: f64, lambda: f64, y: f64, eta: f64, coupling: f64) -> (f64, f64) {
    let r = g - y;
    let g_next = y + (1.0 - eta * lambda + coupling * eta * eta * r * g) * r;
    let lambda_next = lambda - eta * coupling * (4.0 * r * g - eta * lambda * r * r);
    (g_next, lambda_next)
}

/// Dimensionless single-example state.
///
/// With `c = ‖x‖²/(md)` and `r = g − y`: `u = cη²r²`, `v = ηλ`, `w = cη²ry`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarDynamicsState {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub step: usize,
}

impl ScalarDynamicsState {
    pub fn from_output(g: f64, lambda: f64, y: f64, eta: f64, coupling: f64) -> Self {
        let r = g - y;
        let ce2 = coupling * eta * eta;
        Self {
            u: ce2 * r * r,
            v: eta * lambda,
            w: ce2 * r * y,
            step: 0,
        }
    }

    /// `κ = (1 − v + u + w)²`, the per-step growth factor of `u`.
    pub fn kappa(&self) -> f64 {
        let k = 1.0 - self.v + self.u + self.w;
        k * k
    }
}

/// `u' = κu`, `v' = v − u(4 − v) − 4w`, `w' = (1 − v + u + w)w`.
///
/// Returns the new state and the `κ` used for the step.
pub fn uvw_step(state: ScalarDynamicsState) -> (ScalarDynamicsState, f64) {
    let ScalarDynamicsState { u, v, w, step } = state;
    let factor = 1.0 - v + u + w;
    let kappa = factor * factor;
    let next = ScalarDynamicsState {
        u: kappa * u,
        v: v - u * (4.0 - v) - 4.0 * w,
        w: factor * w,
        step: step + 1,
    };
    (next, kappa)
}

fn masked_dot(a: &DVector<f64>, b: &DVector<f64>, mask: &[bool]) -> f64 {
    a.iter()
        .zip(b.iter())
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|((x, y), _)| x * y)
        .sum()
}

fn masked_quadratic(k: &DMatrix<f64>, r: &DVector<f64>, mask: &[bool]) -> f64 {
    let rm = DVector::from_fn(r.len(), |j, _| if mask[j] { r[j] } else { 0.0 });
    rm.dot(&(k * &rm))
}

/// One step of the multi-example recursion for one-dimensional data.
///
/// With `r = g − y`, sign masks `m₊, m₋` and sign-masked inputs `p₁, p₂`:
///
/// ```text
/// g' − y = (I − ηK + (η²/m)(Q₁ + Q₂)) r
/// K'     = K + (η²/m)(K₁ + K₂) − (4η/m)(Q₁ + Q₂)
/// Q₁ = ((r⊙m₊)ᵀ(g⊙m₊)) p₁p₁ᵀ      K₁ = ((r⊙m₊)ᵀK(r⊙m₊)) p₁p₁ᵀ
/// ```
///
/// and likewise for the negative side.
pub fn multi_dynamics_step(
    g: &DVector<f64>,
    k: &DMatrix<f64>,
    data: &Dataset,
    eta: f64,
    width: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (p1, p2) = rank2_eigenstructure(data)?;
    let n = data.n();
    check_dim("outputs", n, g.len())?;
    check_dim("kernel rows", n, k.nrows())?;
    check_dim("kernel cols", n, k.ncols())?;
    if width == 0 {
        return Err(Error::Argument("width must be positive".into()));
    }
    let x = data.inputs.column(0);
    let pos: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let neg: Vec<bool> = x.iter().map(|&v| v < 0.0).collect();
    let m = width as f64;
    let r = g - &data.labels;

    let q1 = masked_dot(&r, g, &pos);
    let q2 = masked_dot(&r, g, &neg);
    let k1 = masked_quadratic(k, &r, &pos);
    let k2 = masked_quadratic(k, &r, &neg);

    let c = eta * eta / m;
    let r_next = &r - k * &r * eta + &p1 * (c * q1 * p1.dot(&r)) + &p2 * (c * q2 * p2.dot(&r));
    let g_next = r_next + &data.labels;

    let outer1 = &p1 * p1.transpose();
    let outer2 = &p2 * p2.transpose();
    let k_next = k + &outer1 * (c * k1 - 4.0 * eta / m * q1) + &outer2 * (c * k2 - 4.0 * eta / m * q2);
    Ok((g_next, k_next))
}

/// Quadratic-term corrections of one gradient-descent step.
///
/// `f(t+1) − y = (I − ηK + R_f) r` and `K(t+1) = K − R_K` hold exactly for a
/// quadratic model.
#[derive(Debug, Clone)]
pub struct ResidualCorrections {
    pub r_f: DMatrix<f64>,
    pub r_k: DMatrix<f64>,
}

fn hessian_rows<E: Evaluation>(eval: &E, delta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = eval.outputs().len();
    let mut e = DVector::zeros(n);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        e[j] = 1.0;
        let row = eval
            .hessian_pullback(delta, &e)
            .ok_or_else(|| Error::Argument("model has no closed-form Hessian".into()))?;
        rows.push(row);
        e[j] = 0.0;
    }
    let p = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(n, p, |j, c| rows[j][c]))
}

/// `R_f = ½η²·GJᵀ` and `R_K = η(GJᵀ + JGᵀ) − η²GGᵀ`, where row `i` of `G` is
/// `H(xᵢ)·Jᵀr`. Hessian products use the closed form and cost O(md) each.
pub fn general_residual_corrections<M: Trainable>(model: &M, data: &Dataset, eta: f64) -> Result<ResidualCorrections> {
    let eval = model.evaluate_batch(&data.inputs)?;
    let r = eval.outputs() - &data.labels;
    let delta = eval.pullback(&r);
    let g = hessian_rows(&eval, &delta)?;
    let j = eval.jacobian();
    let gj = &g * j.transpose();
    let r_f = &gj * (0.5 * eta * eta);
    let r_k = (&gj + gj.transpose()) * eta - (&g * g.transpose()) * (eta * eta);
    Ok(ResidualCorrections { r_f, r_k })
}

/// `(pᵀR_f p, pᵀR_K p)` for a direction `p` (normalized internally), without
/// forming the n × n matrices.
pub fn confined_corrections<E: Evaluation>(
    eval: &E,
    labels: &DVector<f64>,
    eta: f64,
    p: &DVector<f64>,
) -> Result<(f64, f64)> {
    let p = crate::linalg::normalized(p).ok_or_else(|| Error::Argument("zero direction".into()))?;
    let r = eval.outputs() - labels;
    let delta = eval.pullback(&r);
    let gp = eval
        .hessian_pullback(&delta, &p)
        .ok_or_else(|| Error::Argument("model has no closed-form Hessian".into()))?;
    let jp = eval.pullback(&p);
    let cross = gp.dot(&jp);
    Ok((0.5 * eta * eta * cross, 2.0 * eta * cross - eta * eta * gp.norm_squared()))
}

/// `‖x‖²` when the quadratic model has `φ ≡ 0` and `Σ(x)² = ‖x‖²·I`.
pub fn gqm_special_case_norm(model: &GeneralQuadraticModel, x: &DVector<f64>) -> Result<f64> {
    if model.features != FeatureMap::Zero {
        return Err(Error::Argument("special-case dynamics need φ ≡ 0".into()));
    }
    let xnorm2 = x.norm_squared();
    let ok = match &model.curvature {
        Curvature::LinearNet { d, .. } => *d == 1,
        _ => {
            let sigma = model.curvature_matrix(x)?;
            let p = model.dim();
            let diff = &sigma * &sigma - DMatrix::identity(p, p) * xnorm2;
            diff.abs().max() <= 1e-12 * xnorm2.max(1.0)
        }
    };
    if ok {
        Ok(xnorm2)
    } else {
        Err(Error::Argument("special-case dynamics need Σ(x)² = ‖x‖²·I".into()))
    }
}

/// One step of `g(w) = ½γ·wᵀΣ(x)w` with label 0 and `Σ(x)² = ‖x‖²·I`:
///
/// ```text
/// g' = (1 − ηλ + γ²η²‖x‖²g²)·g
/// λ' = λ − ηγ²‖x‖²g²(4 − ηλ)
/// ```
pub fn gqm_dynamics_step(g: f64, lambda: f64, eta: f64, gamma: f64, xnorm2: f64) -> (f64, f64) {
    let c = gamma * gamma * xnorm2;
    let g_next = (1.0 - eta * lambda + c * eta * eta * g * g) * g;
    let lambda_next = lambda - eta * c * g * g * (4.0 - eta * lambda);
    (g_next, lambda_next)
}

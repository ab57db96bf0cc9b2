//! Built-in property checks behind the `verify` command.
//!
//! Each check runs at a small scale in well under a second. The helpers it
//! uses are public so larger-scale tests can call them directly.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::datasets::{gen_gaussian_1d, gen_single_example};
use crate::dynamics::{
    classify_regime, simulate, simulate_closed_form, KernelTracking, RecorderOptions, Regime, Tolerances,
    TrajectoryRecord,
};
use crate::error::Result;
use crate::kernel::{ordered_rank2_directions, rank2_eigenstructure, tangent_kernel};
use crate::linalg::{normalized, relative_difference, symmetric_eigen};
use crate::models::{
    build_linear_net_as_gqm, model_forward, model_gradient, ntk_initialize, AnchoredModel, Dataset, Evaluation, Family,
    NetworkParams, Trainable,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, result: Result<(bool, String)>) -> Self {
        match result {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn vector_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Largest relative disagreement between two recorded runs: outputs compared
/// as vectors, tracked eigenvalues one by one. Runs of different length
/// count as a total disagreement.
pub fn trajectory_gap(a: &TrajectoryRecord, b: &TrajectoryRecord) -> f64 {
    if a.len() != b.len() || a.outputs.len() != b.outputs.len() || a.lambdas.len() != b.lambdas.len() {
        return f64::INFINITY;
    }
    let outputs = a.outputs.iter().zip(&b.outputs).map(|(x, y)| vector_gap(x, y));
    let lambdas = a
        .lambdas
        .iter()
        .zip(&b.lambdas)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| relative_difference(p, q)));
    outputs.chain(lambdas).fold(0.0, f64::max)
}

/// Runs the quadratic model by gradient descent in parameter space and by the
/// closed-form recursion for the same number of steps, and returns
/// [`trajectory_gap`]. The data must be one example or one-dimensional.
pub fn engine_gap(model: &AnchoredModel, data: &Dataset, eta: f64, steps: usize) -> Result<f64> {
    let directions = if data.n() == 1 {
        vec![DVector::from_element(1, 1.0)]
    } else {
        ordered_rank2_directions(model, data)?.into_iter().map(|(_, p)| p).collect()
    };
    let opts = RecorderOptions::new(steps)
        .outputs()
        .directions(directions)
        .kernel(KernelTracking::Directions)
        .run_to_budget();
    let closed = simulate_closed_form(model, data, eta, &opts)?;
    let direct = simulate(model, data, eta, &opts)?;
    Ok(trajectory_gap(&closed, &direct))
}

/// Largest relative error `‖∇ − ∇_fd‖/‖∇‖` of the closed-form parameter
/// gradient against central differences with step `h`, over `inputs`.
pub fn gradient_fd_error(model: &AnchoredModel, inputs: &[DVector<f64>], h: f64) -> Result<f64> {
    let (m, d) = (model.width(), model.input_dim());
    let base = model.current().flatten();
    let at = |flat: DVector<f64>| -> Result<AnchoredModel> {
        model.clone().with_current(NetworkParams::from_flat(m, d, &flat)?)
    };
    let mut worst = 0.0f64;
    for x in inputs {
        let grad = model_gradient(model, x)?;
        let mut fd = DVector::zeros(base.len());
        for k in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[k] += h;
            minus[k] -= h;
            fd[k] = (model_forward(&at(plus)?, x)? - model_forward(&at(minus)?, x)?) / (2.0 * h);
        }
        worst = worst.max((&grad - &fd).norm() / grad.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Orthonormal basis of the complement of the sign-masked directions of
/// one-dimensional data.
pub fn untouched_directions(data: &Dataset) -> Result<Vec<DVector<f64>>> {
    let (p1, p2) = rank2_eigenstructure(data)?;
    let mut basis: Vec<DVector<f64>> = [p1, p2].iter().filter_map(normalized).collect();
    let spanned = basis.len();
    for k in 0..data.n() {
        let mut e = DVector::zeros(data.n());
        e[k] = 1.0;
        for b in &basis {
            e -= b * b.dot(&e);
        }
        if e.norm() > 1e-6 {
            basis.push(e.normalize());
        }
    }
    Ok(basis.split_off(spanned))
}

/// Largest change of the loss projected on the untouched directions, relative
/// to the initial loss.
pub fn untouched_drift(model: &AnchoredModel, data: &Dataset, eta: f64, steps: usize) -> Result<f64> {
    let opts = RecorderOptions::new(steps).directions(untouched_directions(data)?);
    let rec = simulate(model, data, eta, &opts)?;
    let l0 = rec.initial_loss();
    Ok(rec
        .projected
        .iter()
        .flat_map(|s| s.iter().map(move |v| (v - s[0]).abs() / l0))
        .fold(0.0, f64::max))
}

/// Ratio `λ₃/λ₁` of the kernel of one-dimensional data, and the largest
/// residual `‖Kp̂ − (p̂ᵀKp̂)p̂‖/λ₁` of the sign-masked directions.
pub fn rank2_residuals<M: Trainable>(model: &M, data: &Dataset) -> Result<(f64, f64)> {
    let k = model.evaluate_batch(&data.inputs)?.kernel();
    let eig = symmetric_eigen(&k);
    let l1 = eig.values[0];
    let third = eig.values.get(2).map_or(0.0, |v| v.abs() / l1);
    let (p1, p2) = rank2_eigenstructure(data)?;
    let worst = [p1, p2]
        .iter()
        .filter_map(normalized)
        .map(|p| {
            let kp = &k * &p;
            (&kp - &p * p.dot(&kp)).norm() / l1
        })
        .fold(0.0, f64::max);
    Ok((third, worst))
}

/// Regime of one run at `η = factor/λ₀`.
pub fn regime_at(model: &AnchoredModel, data: &Dataset, factor: f64, steps: usize, tol: &Tolerances) -> Result<Regime> {
    let lambda0 = tangent_kernel(model, data)?.lambda_max();
    let mut opts = RecorderOptions::new(steps);
    opts.divergence_threshold = tol.divergence_threshold;
    let rec = simulate(model, data, factor / lambda0, &opts)?;
    Ok(classify_regime(&rec, None, tol)?.regime)
}

fn mixed_sign_data(n: usize, seed: u64) -> Result<Dataset> {
    gen_gaussian_1d(n, seed)
}

fn check_scalar_engine() -> Result<(bool, String)> {
    let data = gen_single_example(5, 1.0, 11)?;
    let model = AnchoredModel::initialize(Family::Nqm, 400, 5, 11)?;
    let eta = 3.0 / tangent_kernel(&model, &data)?.lambda_max();
    let gap = engine_gap(&model, &data, eta, 100)?;
    Ok((gap < 1e-8, format!("max relative gap {gap:.2e} over 100 steps at ηλ₀ = 3")))
}

fn check_multi_engine() -> Result<(bool, String)> {
    let data = mixed_sign_data(8, 12)?;
    let model = AnchoredModel::initialize(Family::Nqm, 400, 1, 12)?;
    let eta = 3.0 / tangent_kernel(&model, &data)?.lambda_max();
    let gap = engine_gap(&model, &data, eta, 100)?;
    Ok((gap < 1e-6, format!("max relative gap {gap:.2e} over 100 steps, n = 8")))
}

fn check_gradients() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (i, family) in [Family::Network, Family::Linearized, Family::Nqm].into_iter().enumerate() {
        let anchor = ntk_initialize(12, 3, 20 + i as u64)?;
        let shifted = ntk_initialize(12, 3, 40 + i as u64)?;
        let current = NetworkParams::new(
            &anchor.first_layer + &shifted.first_layer * 0.1,
            &anchor.second_layer + &shifted.second_layer * 0.1,
        )?;
        let model = AnchoredModel::new(family, anchor).with_current(current)?;
        let inputs: Vec<DVector<f64>> =
            (0..3).map(|j| gen_single_example(3, 1.0, 60 + j).map(|d| d.input(0))).collect::<Result<_>>()?;
        worst = worst.max(gradient_fd_error(&model, &inputs, 1e-6)?);
    }
    Ok((worst < 1e-6, format!("worst relative error {worst:.2e} across families")))
}

fn check_rank2() -> Result<(bool, String)> {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let data = mixed_sign_data(12, seed)?;
        for family in [Family::Network, Family::Nqm] {
            let model = AnchoredModel::initialize(family, 200, 1, seed)?;
            let (third, residual) = rank2_residuals(&model, &data)?;
            worst = (worst.0.max(third), worst.1.max(residual));
        }
    }
    Ok((
        worst.0 < 1e-8 && worst.1 < 1e-8,
        format!("λ₃/λ₁ ≤ {:.1e}, eigenvector residual ≤ {:.1e}", worst.0, worst.1),
    ))
}

fn check_regime_bands() -> Result<(bool, String)> {
    let data = gen_single_example(3, 1.0, 5)?;
    let model = AnchoredModel::initialize(Family::Nqm, 1000, 3, 5)?;
    let tol = Tolerances::default();
    let found: Vec<Regime> = [1.0, 3.0, 4.5]
        .iter()
        .map(|&f| regime_at(&model, &data, f, 1000, &tol))
        .collect::<Result<_>>()?;
    let expected = [Regime::Monotonic, Regime::Catapult, Regime::Divergent];
    Ok((found == expected, format!("ηλ₀ ∈ {{1, 3, 4.5}} → {found:?}")))
}

fn check_gqm_catapult() -> Result<(bool, String)> {
    let params = ntk_initialize(200, 1, 9)?;
    let x = DVector::from_element(1, 1.0);
    let gqm = build_linear_net_as_gqm(&params.first_layer, &params.second_layer, &x)?;
    let data = Dataset::new(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1))?;
    let lambda0 = tangent_kernel(&gqm, &data)?.lambda_max();
    let rec = simulate(&gqm, &data, 3.0 / lambda0, &RecorderOptions::new(1000))?;
    let regime = classify_regime(&rec, None, &Tolerances::default()).map(|r| r.regime);
    Ok((
        matches!(regime, Ok(Regime::Catapult)),
        format!("linear net as quadratic model at ηλ₀ = 3 → {regime:?}"),
    ))
}

fn check_untouched() -> Result<(bool, String)> {
    let data = mixed_sign_data(8, 3)?;
    let model = AnchoredModel::initialize(Family::Nqm, 400, 1, 3)?;
    let eta = 3.0 / tangent_kernel(&model, &data)?.lambda_max();
    let drift = untouched_drift(&model, &data, eta, 300)?;
    Ok((drift < 1e-8, format!("drift {drift:.1e}·L(0) over 300 catapult steps")))
}

/// Runs every check and reports one outcome each.
pub fn verify_suite() -> Vec<CheckOutcome> {
    type Check = fn() -> Result<(bool, String)>;
    let checks: [(&'static str, Check); 7] = [
        ("scalar-engine-equivalence", check_scalar_engine),
        ("multi-example-engine-equivalence", check_multi_engine),
        ("gradient-finite-differences", check_gradients),
        ("rank-two-kernel", check_rank2),
        ("regime-bands", check_regime_bands),
        ("gqm-special-case-catapult", check_gqm_catapult),
        ("untouched-directions", check_untouched),
    ];
    checks
        .into_iter()
        .map(|(name, check)| CheckOutcome::from_result(name, check()))
        .collect()
}

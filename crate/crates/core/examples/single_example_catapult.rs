// One training example at ηλ₀ = 3: gradient descent in parameter space, the
// scalar (g, λ) recursion and the dimensionless u/v/w system side by side.

use nqm::dynamics::{
    classify_regime, simulate, simulate_closed_form, uvw_step, KernelTracking, RecorderOptions, ScalarDynamicsState,
    Tolerances,
};
use nqm::experiments::{checks::trajectory_gap, gen_single_example};
use nqm::kernel::tangent_kernel;
use nqm::models::{AnchoredModel, Family};

/// Returns the largest relative gap between the two engines.
pub fn run_example() -> nqm::Result<f64> {
    let (m, d) = (2000, 5);
    let data = gen_single_example(d, 1.0, 1)?;
    let model = AnchoredModel::initialize(Family::Nqm, m, d, 1)?;
    let lambda0 = tangent_kernel(&model, &data)?.lambda_max();
    let eta = 3.0 / lambda0;

    let opts = RecorderOptions::new(200)
        .outputs()
        .directions(vec![nalgebra::DVector::from_element(1, 1.0)])
        .kernel(KernelTracking::Directions)
        .run_to_budget();
    let direct = simulate(&model, &data, eta, &opts)?;
    let closed = simulate_closed_form(&model, &data, eta, &opts)?;
    let gap = trajectory_gap(&direct, &closed);
    let report = classify_regime(&direct, None, &Tolerances::default())?;
    println!(
        "{:?}: L(0) = {:.3}, peak {:.3e} at step {}, final ηλ = {:.4}",
        report.regime,
        report.initial_loss,
        report.peak_loss,
        report.peak_step,
        eta * direct.lambda(0).last().copied().unwrap_or(f64::NAN)
    );
    println!("closed form vs parameter space: max relative gap {gap:.2e}");

    let coupling = data.input(0).norm_squared() / (m * d) as f64;
    let mut state = ScalarDynamicsState::from_output(direct.outputs[0][0], lambda0, 1.0, eta, coupling);
    let mut peak_u = state.u;
    for _ in 0..200 {
        state = uvw_step(state).0;
        peak_u = peak_u.max(state.u);
    }
    println!("u/v/w: u peaks at {peak_u:.3e}, v settles at {:.4}", state.v);
    Ok(gap)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

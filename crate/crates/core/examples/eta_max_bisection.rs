// The largest convergent learning rate found by bisection sits near 4/λ₀,
// twice the critical rate.

use nqm::dynamics::empirical_eta_max;
use nqm::experiments::gen_single_example;
use nqm::kernel::{critical_lr, tangent_kernel};
use nqm::models::{AnchoredModel, Family};

/// Returns `η_max·λ₀`.
pub fn run_example() -> nqm::Result<f64> {
    let data = gen_single_example(5, 1.0, 2)?;
    let model = AnchoredModel::initialize(Family::Nqm, 2000, 5, 2)?;
    let lambda0 = tangent_kernel(&model, &data)?.lambda_max();
    let rates = critical_lr(&tangent_kernel(&model, &data)?)?;
    let found = empirical_eta_max(&model, &data, (1.0 / lambda0, 6.0 / lambda0), 1000)?;
    println!(
        "η_c·λ₀ = {:.3}, predicted η_max·λ₀ = {:.3}, bisection η_max·λ₀ = {:.3} after {} probes",
        rates.eta_critical * lambda0,
        rates.eta_max_estimate * lambda0,
        found.estimate * lambda0,
        found.probes.len()
    );
    Ok(found.estimate * lambda0)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

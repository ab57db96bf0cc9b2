// Along a catapult the quadratic corrections live in the top eigenspace of
// the kernel: both p₁ᵀR_f p₁ and p₁ᵀR_K p₁ turn positive while the loss is
// large, and the loss projected on p₁ carries the spike.

use nqm::dynamics::Tolerances;
use nqm::experiments::{gen_gaussian_1d, top_eigenspace_trace, EigenspaceTrace};
use nqm::kernel::tangent_kernel;
use nqm::models::{AnchoredModel, Family};

pub fn run_example() -> nqm::Result<Vec<EigenspaceTrace>> {
    let data = gen_gaussian_1d(32, 4)?;
    let mut traces = Vec::new();
    for family in [Family::Nqm, Family::Network] {
        let model = AnchoredModel::initialize(family, 2000, 1, 0)?;
        let eta = 2.8 / tangent_kernel(&model, &data)?.lambda_max();
        let trace = top_eigenspace_trace(&model, &data, eta, 300, &Tolerances::default())?;
        let l0 = trace.rows[0].loss;
        let hot: Vec<_> = trace.rows.iter().filter(|r| r.loss > 10.0 * l0).collect();
        let positive = hot.iter().filter(|r| r.p1_rf_p1 > 0.0 && r.p1_rk_p1 > 0.0).count();
        println!(
            "{family}: peak loss {:.3e}, peak Π₁L {:.3e}, corrections positive on {positive}/{} steps above 10·L(0)",
            trace.peak_loss(),
            trace.peak_pi1_loss(),
            hot.len()
        );
        traces.push(trace);
    }
    Ok(traces)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

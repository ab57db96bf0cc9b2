// Tangent kernel of one-dimensional data: rank two, with the sign-masked
// inputs as eigenvectors, and the learning-rate thresholds it implies.

use nqm::experiments::{checks::rank2_residuals, gen_gaussian_1d};
use nqm::kernel::{critical_lr, kernel_scale_bounds, tangent_kernel};
use nqm::models::{AnchoredModel, Family};

/// Returns `(λ₃/λ₁, η_c)`.
pub fn run_example() -> nqm::Result<(f64, f64)> {
    let data = gen_gaussian_1d(32, 4)?;
    let model = AnchoredModel::initialize(Family::Nqm, 2000, 1, 0)?;
    let snap = tangent_kernel(&model, &data)?;
    println!("top eigenvalues {:.4?}, numerical rank {}", &snap.eigenvalues[..3], snap.numerical_rank());
    let (lo, hi) = kernel_scale_bounds(&data)?;
    println!("λ₁ = {:.3} inside the band [{lo:.3}, {hi:.3}]", snap.lambda_max());

    let (third, residual) = rank2_residuals(&model, &data)?;
    println!("λ₃/λ₁ = {third:.1e}, sign-mask eigenvector residual {residual:.1e}");

    let rates = critical_lr(&snap)?;
    for (i, dir) in rates.per_direction.iter().enumerate() {
        println!("direction {}: λ = {:.3}, 2/λ = {:.5}, 4/λ = {:.5}", i + 1, dir.eigenvalue, dir.eta_critical, dir.eta_max);
    }
    Ok((third, rates.eta_critical))
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

// Three learning-rate bands on one-dimensional data: below 2/λ₁ nothing
// catapults, between 2/λ₁ and 2/λ₂ only the top direction does, and above
// 2/λ₂ both do.

use nqm::dynamics::{classify_regime, simulate, DirectionRegime, KernelTracking, RecorderOptions, Regime, Tolerances};
use nqm::experiments::{find_two_threshold_dataset, gen_gaussian_1d};
use nqm::kernel::ordered_rank2_directions;
use nqm::models::{AnchoredModel, Family};

pub fn run_example() -> nqm::Result<Vec<(Regime, Vec<DirectionRegime>)>> {
    let (n, m) = (32, 2000);
    let bands = find_two_threshold_dataset(n, m, 0, 100)?;
    println!(
        "data seed {}: λ₁ = {:.3}, λ₂ = {:.3}, guard ±{:.3} in ηλ",
        bands.data_seed, bands.lambda1, bands.lambda2, bands.guard
    );
    let data = gen_gaussian_1d(n, bands.data_seed)?;
    let model = AnchoredModel::initialize(Family::Nqm, m, 1, 0)?;
    let directions = ordered_rank2_directions(&model, &data)?.into_iter().map(|(_, p)| p).collect();
    let opts = RecorderOptions::new(2000).directions(directions).kernel(KernelTracking::Directions);
    let mut out = Vec::new();
    for (name, eta) in ["below", "between", "above"].iter().zip(bands.midpoints()) {
        let rec = simulate(&model, &data, eta, &opts)?;
        let report = classify_regime(&rec, None, &Tolerances::default())?;
        let drop = |i: usize| {
            let s = rec.lambda(i);
            1.0 - s[s.len() - 1] / s[0]
        };
        println!(
            "{name:>8}: ηλ₁ = {:.3}  {:?} per direction {:?}, λ₁ drop {:.1}%, λ₂ drop {:.1}%",
            eta * bands.lambda1,
            report.regime,
            report.per_direction,
            100.0 * drop(0),
            100.0 * drop(1)
        );
        out.push((report.regime, report.per_direction));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

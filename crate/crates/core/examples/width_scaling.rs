// Peak loss of the catapult grows roughly linearly with width at fixed
// δ = ηλ₀ − 2.

use nqm::experiments::{width_scaling_study, DatasetSpec, EtaGrid, ExperimentConfig, ModelKind, WidthStudy};

pub fn run_example() -> nqm::Result<WidthStudy> {
    let config = ExperimentConfig {
        dataset: DatasetSpec::Single {
            d: 5,
            label: 1.0,
            seed: 1000,
        },
        families: vec![ModelKind::Nqm],
        width_grid: vec![500, 1000, 2000],
        eta_grid: EtaGrid::Critical(vec![1.5]),
        seeds: vec![0, 1],
        max_steps: 500,
        delta: 1.0,
        ..ExperimentConfig::synthetic_default()
    };
    let study = width_scaling_study(&config)?;
    for row in &study.rows {
        println!(
            "m = {:>5}: mean peak {:9.3}, peak/L(0) {:8.2}, kernel drop {:.3}, control peak/L(0) {:.3}",
            row.width,
            row.mean_peak_loss,
            row.mean_peak_ratio,
            row.mean_kernel_drop.unwrap_or(f64::NAN),
            row.control_peak_ratio
        );
    }
    println!("log-log slope {:.3}", study.slope);
    Ok(study)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

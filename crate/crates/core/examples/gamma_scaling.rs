// Random quadratic model at η = 2.8: smaller curvature scale γ gives a
// larger catapult peak, and a large enough γ diverges.

use nqm::experiments::{gamma_scaling_study, ExperimentConfig, GammaStudy};

pub fn run_example() -> nqm::Result<GammaStudy> {
    let config = ExperimentConfig {
        gamma_grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
        max_steps: 400,
        ..ExperimentConfig::gqm_default()
    };
    let study = gamma_scaling_study(&config)?;
    for row in &study.rows {
        println!(
            "γ = {:7.0e}: mean peak {:>12}, catapult {}, divergent {}",
            row.gamma,
            row.mean_peak_loss.map_or("-".into(), |p| format!("{p:.4e}")),
            row.catapult,
            row.divergent
        );
    }
    Ok(study)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

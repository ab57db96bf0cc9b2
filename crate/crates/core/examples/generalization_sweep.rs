// Learning-rate sweep on the bundled two-class CSV: best test loss for the
// network, its quadratic model and its linearization.

use std::path::PathBuf;

use nqm::experiments::{lr_sweep, DatasetSpec, EtaGrid, ExperimentConfig, ModelKind, SweepResult};

pub fn bundled_csv() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/twoclass.csv")
}

pub fn run_example() -> nqm::Result<SweepResult> {
    let config = ExperimentConfig {
        dataset: DatasetSpec::CsvTwoclass {
            path: bundled_csv(),
            n_train: 128,
            n_test: 256,
            split_seed: 0,
        },
        families: vec![ModelKind::Nqm, ModelKind::Network, ModelKind::Linearized],
        width_grid: vec![1000],
        eta_grid: EtaGrid::Critical(vec![0.5, 0.95, 1.5]),
        seeds: vec![0, 1],
        max_steps: 100,
        ..ExperimentConfig::synthetic_default()
    };
    let result = lr_sweep(&config)?;
    let mut csv = Vec::new();
    result.write_curves_csv(&mut csv).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(result)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

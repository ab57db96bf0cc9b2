// Experiment configs: JSON round trip, dotted-path overrides and the hash
// that names every output file.

use nqm::experiments::ExperimentConfig;

pub fn run_example() -> nqm::Result<ExperimentConfig> {
    let base = ExperimentConfig::synthetic_default();
    let tuned = base.apply_overrides(&["model.width=2000", "dataset.n=64", "tolerances.rise_factor=3"])?;
    println!("base hash  {}", &base.hash()[..16]);
    println!("tuned hash {}", &tuned.hash()[..16]);
    let again = ExperimentConfig::from_json(&tuned.to_json())?;
    assert_eq!(again.hash(), tuned.hash());
    match base.apply_overrides(&["model.depth=3"]) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are rejected"),
    }
    Ok(tuned)
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

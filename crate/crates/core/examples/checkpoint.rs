// Save a model mid-training and resume from the checkpoint.

use nqm::dynamics::gd_step;
use nqm::experiments::gen_gaussian_1d;
use nqm::models::{AnchoredModel, Checkpoint, Family};

/// Returns the loss difference between the resumed and uninterrupted runs.
pub fn run_example() -> nqm::Result<f64> {
    let data = gen_gaussian_1d(16, 0)?;
    let mut model = AnchoredModel::initialize(Family::Nqm, 300, 1, 7)?;
    for _ in 0..10 {
        gd_step(&mut model, &data, 0.01)?;
    }
    let dir = std::env::temp_dir().join("nqm-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| nqm::Error::Argument(e.to_string()))?;
    let path = dir.join("model.ckpt");
    Checkpoint::from_model(&model).save(&path)?;
    let mut resumed = Checkpoint::load(&path)?.into_model()?;

    let mut a = 0.0;
    let mut b = 0.0;
    for _ in 0..10 {
        a = gd_step(&mut model, &data, 0.01)?;
        b = gd_step(&mut resumed, &data, 0.01)?;
    }
    println!("uninterrupted loss {a:.12}, resumed loss {b:.12}");
    Ok((a - b).abs())
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

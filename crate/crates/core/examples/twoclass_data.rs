// Generates the bundled two-class CSV and loads it back with a seeded
// train/test split.
//
// `cargo run --example twoclass_data -- [PATH]` writes to PATH instead of a
// temporary directory.

use std::path::{Path, PathBuf};

use nqm::experiments::{gen_twoclass, load_twoclass_csv, write_twoclass_csv};

/// Rows, features and seed of the bundled `data/twoclass.csv`.
pub const BUNDLED: (usize, usize, u64) = (2000, 5, 77);

pub fn write_bundled(path: &Path) -> nqm::Result<()> {
    let (n, d, seed) = BUNDLED;
    write_twoclass_csv(path, &gen_twoclass(n, d, seed)?)
}

pub fn run_example(path: Option<PathBuf>) -> nqm::Result<(usize, usize)> {
    let dir = std::env::temp_dir().join("nqm-twoclass-example");
    let path = path.unwrap_or_else(|| dir.join("twoclass.csv"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| nqm::Error::Argument(e.to_string()))?;
    }
    write_bundled(&path)?;
    let (train, test) = load_twoclass_csv(&path, 256, 500, 0)?;
    let positive = train.labels.iter().filter(|&&y| y > 0.0).count();
    println!("wrote {}: {} train rows ({positive} positive), {} test rows", path.display(), train.n(), test.n());
    Ok((train.n(), test.n()))
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example(std::env::args().nth(1).map(PathBuf::from)).map(|_| ())
}

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::Dataset;
use crate::rng;

/// Balanced two-class 1-D data: label −1 inputs from N(−2, 1), label +1
/// inputs from N(2, 1). The first half carries label +1.
pub fn gen_gaussian_1d(n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::Argument(format!("gen_gaussian_1d needs an even n ≥ 2, got {n}")));
    }
    let mut r = rng::stream(seed, rng::streams::DATA);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for j in 0..n {
        let y = if j < n / 2 { 1.0 } else { -1.0 };
        let z: f64 = r.sample(StandardNormal);
        xs.push(2.0 * y + z);
        ys.push(y);
    }
    Dataset::scalar(&xs, &ys)
}

/// One example `x ~ N(0, I_d)` rescaled to `‖x‖² = d`, with label `y`.
pub fn gen_single_example(d: usize, y: f64, seed: u64) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::Argument("d must be positive".into()));
    }
    let mut r = rng::stream(seed, rng::streams::DATA);
    let mut x: DVector<f64> = DVector::from_fn(d, |_, _| r.sample(StandardNormal));
    while x.norm() == 0.0 {
        x = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
    }
    let x = &x * ((d as f64).sqrt() / x.norm());
    Dataset::single(x, y)
}

/// Two-class data with an XOR-sign rule: `x ~ N(0, I_d)` scaled to unit
/// norm, label `sign(x₁·x₂)`. Needs `d ≥ 2`.
pub fn gen_twoclass(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 2 {
        return Err(Error::Argument(format!("gen_twoclass needs n ≥ 2 and d ≥ 2, got n={n}, d={d}")));
    }
    let mut r = rng::stream(seed, rng::streams::DATA);
    let mut inputs = DMatrix::zeros(n, d);
    let mut labels = DVector::zeros(n);
    for j in 0..n {
        for k in 0..d {
            inputs[(j, k)] = r.sample::<f64, _>(StandardNormal);
        }
        labels[j] = if inputs[(j, 0)] * inputs[(j, 1)] >= 0.0 { 1.0 } else { -1.0 };
    }
    normalize_rows(&mut inputs);
    Dataset::new(inputs, labels)
}

fn normalize_rows(inputs: &mut DMatrix<f64>) {
    for mut row in inputs.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Loads `features…,label` rows, remaps {0, 1} labels to {−1, +1}, scales
/// rows to unit norm, and draws a seeded disjoint train/test split.
pub fn load_twoclass_csv(path: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                line: 0,
                message: format!("{other:?}"),
            },
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() < 2 {
            return Err(parse_err("need at least one feature and a label".into()));
        }
        let values = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("`{f}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let (label, features) = values.split_last().expect("len ≥ 2");
        let label = match *label {
            l if l == 1.0 => 1.0,
            l if l == -1.0 || l == 0.0 => -1.0,
            l => return Err(parse_err(format!("label {l} not in {{-1, 0, 1}}"))),
        };
        if let Some(first) = rows.first() {
            if first.len() != features.len() {
                return Err(parse_err(format!("expected {} features, found {}", first.len(), features.len())));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite feature".into()));
        }
        rows.push(features.to_vec());
        labels.push(label);
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::Argument("train and test sizes must be positive".into()));
    }
    if n_train + n_test > rows.len() {
        return Err(Error::Argument(format!(
            "need {} rows for the split, file has {}",
            n_train + n_test,
            rows.len()
        )));
    }
    let d = rows[0].len();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let build = |idx: &[usize]| {
        let mut inputs = DMatrix::from_fn(idx.len(), d, |i, k| rows[idx[i]][k]);
        normalize_rows(&mut inputs);
        Dataset::new(inputs, DVector::from_iterator(idx.len(), idx.iter().map(|&i| labels[i])))
    };
    Ok((build(&order[..n_train])?, build(&order[n_train..n_train + n_test])?))
}

/// Writes `features…,label` rows.
pub fn write_twoclass_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for j in 0..data.n() {
        let mut row: Vec<String> = data.inputs.row(j).iter().map(|v| format!("{v:.6}")).collect();
        row.push(format!("{}", data.labels[j]));
        w.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

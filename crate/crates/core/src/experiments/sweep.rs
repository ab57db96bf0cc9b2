use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DatasetSpec, ExperimentConfig, ModelKind, Optimizer};
use super::datasets::{gen_gaussian_1d, gen_single_example, load_twoclass_csv};
use crate::dynamics::{
    classify_regime, train, KernelTracking, RecorderOptions, Regime, RegimeReport, StopReason,
};
use crate::error::{Error, Result};
use crate::kernel::{critical_lr, ordered_rank2_directions, tangent_kernel};
use crate::models::{build_random_gqm, AnchoredModel, Dataset, GeneralQuadraticModel, Trainable};

/// Seed offset for the held-out half of generated 1-D data.
const TEST_SEED_OFFSET: u64 = 1 << 32;

/// Training data plus an optional held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Materializes the data of `spec` for one run. Generated single examples
/// depend on `run_seed`; the other kinds do not.
pub fn load_task(spec: &DatasetSpec, run_seed: u64) -> Result<Task> {
    match spec {
        DatasetSpec::Synthetic1d { n, seed, n_test } => Ok(Task {
            train: gen_gaussian_1d(*n, *seed)?,
            test: match n_test {
                0 => None,
                k => Some(gen_gaussian_1d(*k, seed.wrapping_add(TEST_SEED_OFFSET))?),
            },
        }),
        DatasetSpec::CsvTwoclass {
            path,
            n_train,
            n_test,
            split_seed,
        } => {
            let (train, test) = load_twoclass_csv(path, *n_train, *n_test, *split_seed)?;
            Ok(Task { train, test: Some(test) })
        }
        DatasetSpec::Single { d, label, seed } => Ok(Task {
            train: gen_single_example(*d, *label, seed.wrapping_add(run_seed))?,
            test: None,
        }),
        DatasetSpec::GqmRandom { dim, label, seed } => {
            let (_, task) = gqm_instance(*dim, *label, seed.wrapping_add(run_seed))?;
            Ok(task)
        }
    }
}

/// The random quadratic model and its one-example task.
pub fn gqm_instance(dim: usize, label: f64, seed: u64) -> Result<(GeneralQuadraticModel, Task)> {
    let (model, x) = build_random_gqm(dim, seed)?;
    let train = Dataset::single(x, label)?;
    Ok((model, Task { train, test: None }))
}

/// A model ready to train, in one of the two representations.
#[derive(Debug, Clone)]
pub(crate) enum AnyModel {
    Anchored(AnchoredModel),
    Quadratic(GeneralQuadraticModel),
}

/// Builds the model and task for one `(family, width, seed)` cell.
pub(crate) fn build_cell(config: &ExperimentConfig, kind: ModelKind, width: usize, seed: u64) -> Result<(AnyModel, Task)> {
    match (kind.family(), &config.dataset) {
        (None, DatasetSpec::GqmRandom { dim, label, seed: base }) => {
            let (model, task) = gqm_instance(*dim, *label, base.wrapping_add(seed))?;
            Ok((AnyModel::Quadratic(model.with_gamma(config.gamma)?), task))
        }
        (None, _) => Err(Error::config("families", "gqm needs a gqm-random dataset")),
        (Some(family), spec) => {
            let task = load_task(spec, seed)?;
            let model = AnchoredModel::initialize(family, width, task.train.d(), seed)?.with_cache(&task.train.inputs)?;
            Ok((AnyModel::Anchored(model), task))
        }
    }
}

/// Per-step series kept when `keep_traces` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub loss: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

/// Outcome of one trained cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub eta: f64,
    pub eta_critical: f64,
    /// `λ_max` of the initial kernel.
    pub lambda0: f64,
    /// `λ_max` of the final kernel; absent when the run blew up.
    pub lambda_final: Option<f64>,
    /// Present unless the run could not be classified.
    pub report: Option<RegimeReport>,
    pub unclassified: Option<String>,
    pub stop: StopReason,
    pub steps: usize,
    pub best_train_loss: f64,
    pub best_test_loss: Option<f64>,
    pub best_test_accuracy: Option<f64>,
    pub trace: Option<Trace>,
}

impl CellSummary {
    pub fn regime(&self) -> Option<Regime> {
        self.report.as_ref().map(|r| r.regime)
    }

    /// `η / η_c`.
    pub fn eta_ratio(&self) -> f64 {
        self.eta / self.eta_critical
    }

    pub fn diverged(&self) -> bool {
        self.regime() == Some(Regime::Divergent)
            || matches!(self.stop, StopReason::Diverged { .. } | StopReason::NonFinite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum CellOutcome {
    Completed(Box<CellSummary>),
    Failed { error: String },
}

/// One grid cell: `(family, width, η index, seed)` and what happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub family: ModelKind,
    pub width: usize,
    pub eta_index: usize,
    pub seed: u64,
    pub outcome: CellOutcome,
}

impl CellResult {
    pub fn summary(&self) -> Option<&CellSummary> {
        match &self.outcome {
            CellOutcome::Completed(s) => Some(s),
            CellOutcome::Failed { .. } => None,
        }
    }
}

/// Seed-aggregated point of a best-test-loss curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub family: ModelKind,
    pub width: usize,
    pub eta_index: usize,
    /// Mean η over seeds.
    pub eta: f64,
    /// Mean `η / η_c` over seeds.
    pub eta_ratio: f64,
    /// Mean best test loss; absent when any seed diverged, failed, or had no
    /// test set.
    pub best_test_loss: Option<f64>,
    pub stddev: Option<f64>,
    pub divergent: usize,
    pub runs: usize,
}

/// All cells of a sweep in grid order: family, then width, then η, then
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub cells: Vec<CellResult>,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub(crate) fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) if v.is_finite() => format!("{v:e}"),
        _ => String::new(),
    }
}

impl SweepResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    /// Aggregates seeds into one point per `(family, width, η index)`.
    pub fn curves(&self) -> Vec<CurvePoint> {
        let mut out: Vec<CurvePoint> = Vec::new();
        let mut start = 0;
        while start < self.cells.len() {
            let head = &self.cells[start];
            let end = start
                + self.cells[start..]
                    .iter()
                    .take_while(|c| c.family == head.family && c.width == head.width && c.eta_index == head.eta_index)
                    .count();
            let group = &self.cells[start..end];
            let summaries: Vec<&CellSummary> = group.iter().filter_map(CellResult::summary).collect();
            let divergent = summaries.iter().filter(|s| s.diverged()).count();
            let tests: Vec<f64> = summaries.iter().filter_map(|s| s.best_test_loss).collect();
            let defined = divergent == 0 && summaries.len() == group.len() && tests.len() == group.len();
            let (loss, std) = mean_std(&tests);
            let etas: Vec<f64> = summaries.iter().map(|s| s.eta).collect();
            let ratios: Vec<f64> = summaries.iter().map(|s| s.eta_ratio()).collect();
            out.push(CurvePoint {
                family: head.family,
                width: head.width,
                eta_index: head.eta_index,
                eta: if etas.is_empty() { f64::NAN } else { mean_std(&etas).0 },
                eta_ratio: if ratios.is_empty() { f64::NAN } else { mean_std(&ratios).0 },
                best_test_loss: defined.then_some(loss),
                stddev: defined.then_some(std),
                divergent,
                runs: group.len(),
            });
            start = end;
        }
        out
    }

    /// The curve of one family at one width.
    pub fn curve(&self, family: ModelKind, width: usize) -> Vec<CurvePoint> {
        self.curves()
            .into_iter()
            .filter(|p| p.family == family && p.width == width)
            .collect()
    }

    /// `family,eta,best_test_loss,stddev`, one row per curve point. Undefined
    /// points have empty loss fields.
    pub fn write_curves_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "family,eta,best_test_loss,stddev")?;
        for p in self.curves() {
            writeln!(
                out,
                "{},{:e},{},{}",
                p.family,
                p.eta,
                fmt_opt(p.best_test_loss),
                fmt_opt(p.stddev)
            )?;
        }
        Ok(())
    }

    /// `eta,step,loss,lambda1,lambda2` for the traced cells of the first
    /// family, width and seed.
    pub fn write_traces_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eta,step,loss,lambda1,lambda2")?;
        let Some(first) = self.cells.first() else { return Ok(()) };
        for cell in self
            .cells
            .iter()
            .filter(|c| c.family == first.family && c.width == first.width && c.seed == first.seed)
        {
            let Some(s) = cell.summary() else { continue };
            let Some(trace) = &s.trace else { continue };
            for (t, loss) in trace.loss.iter().enumerate() {
                let l1 = trace.lambda1.get(t).copied();
                let l2 = trace.lambda2.get(t).copied();
                writeln!(out, "{:e},{t},{},{},{}", s.eta, fmt_opt(Some(*loss)), fmt_opt(l1), fmt_opt(l2))?;
            }
        }
        Ok(())
    }

    /// Regime reports as JSON lines, in grid order. Failed and unclassified
    /// cells are skipped.
    /// One line per cell: family, width, η/η_c, seed, regime, peak ratio and
    /// best test loss.
    pub fn report_lines(&self) -> Vec<String> {
        self.cells
            .iter()
            .map(|c| {
                let head = format!("{} m={} eta#{} seed={}", c.family, c.width, c.eta_index, c.seed);
                match &c.outcome {
                    CellOutcome::Failed { error } => format!("{head} failed: {error}"),
                    CellOutcome::Completed(s) => format!(
                        "{head} eta/eta_c={:.3} regime={} peak/L0={:.3e} best_test={}",
                        s.eta_ratio(),
                        s.regime().map_or_else(|| "unclassified".to_string(), |r| format!("{r:?}").to_lowercase()),
                        s.report.as_ref().map_or(f64::NAN, |r| r.peak_loss / r.initial_loss),
                        fmt_opt(s.best_test_loss)
                    ),
                }
            })
            .collect()
    }
}

/// Kernel tracking for a training set: the ordered sign-masked directions
/// for 1-D data, the single output direction for one example, nothing
/// otherwise.
pub(crate) fn tracked_directions<M: Trainable>(model: &M, data: &Dataset) -> Result<Vec<DVector<f64>>> {
    if data.n() == 1 {
        return Ok(vec![DVector::from_element(1, 1.0)]);
    }
    if data.d() == 1 && data.inputs.iter().any(|&x| x != 0.0) {
        return Ok(ordered_rank2_directions(model, data)?.into_iter().map(|(_, p)| p).collect());
    }
    Ok(Vec::new())
}

/// Trains one model and summarizes the run.
pub(crate) fn run_trainable<M: Trainable>(
    model: M,
    task: &Task,
    eta_of: impl Fn(f64) -> f64,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<CellSummary> {
    let snap = tangent_kernel(&model, &task.train)?;
    let thresholds = critical_lr(&snap)?;
    let eta = eta_of(thresholds.eta_critical);
    let dirs = tracked_directions(&model, &task.train)?;
    let mut opts = RecorderOptions::new(config.max_steps);
    opts.divergence_threshold = config.tolerances.divergence_threshold;
    if !dirs.is_empty() {
        opts = opts.directions(dirs).kernel(KernelTracking::Directions);
    }
    if let Some(test) = &task.test {
        opts = opts.test_set(test.clone(), config.eval_every);
    }
    if let Optimizer::Sgd { batch } = config.optimizer {
        opts = opts.sgd(batch, seed);
    }
    let (rec, last) = train(model, &task.train, eta, &opts)?;
    let blew_up = matches!(rec.stop, Some(StopReason::Diverged { .. }) | Some(StopReason::NonFinite { .. }));
    let lambda_final = if blew_up {
        None
    } else {
        tangent_kernel(&last, &task.train).ok().map(|s| s.lambda_max())
    };
    let (report, unclassified) = match classify_regime(&rec, Some(&thresholds), &config.tolerances) {
        Ok(r) => (Some(r), None),
        Err(Error::Unclassified(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    let best = rec.best_test();
    let trace = config.keep_traces.then(|| Trace {
        loss: rec.loss.clone(),
        lambda1: rec.lambdas.first().cloned().unwrap_or_default(),
        lambda2: rec.lambdas.get(1).cloned().unwrap_or_default(),
    });
    Ok(CellSummary {
        eta,
        eta_critical: thresholds.eta_critical,
        lambda0: snap.lambda_max(),
        lambda_final,
        report,
        unclassified,
        stop: rec.stop.clone().expect("finished runs carry a stop reason"),
        steps: rec.len() - 1,
        best_train_loss: rec.min_loss(),
        best_test_loss: best.as_ref().map(|b| b.loss),
        best_test_accuracy: rec.evals.iter().map(|e| e.accuracy).reduce(f64::max),
        trace,
    })
}

fn run_cell(config: &ExperimentConfig, kind: ModelKind, width: usize, eta_index: usize, seed: u64) -> Result<CellSummary> {
    let (model, task) = build_cell(config, kind, width, seed)?;
    let eta_of = |eta_c: f64| config.eta_grid.eta(eta_index, eta_c);
    match model {
        AnyModel::Anchored(m) => run_trainable(m, &task, eta_of, config, seed),
        AnyModel::Quadratic(m) => run_trainable(m, &task, eta_of, config, seed),
    }
}

/// Cells of the sweep grid in canonical order.
pub(crate) fn grid(config: &ExperimentConfig) -> Vec<(ModelKind, usize, usize, u64)> {
    let mut cells = Vec::new();
    for &family in &config.families {
        let widths: &[usize] = if family == ModelKind::Gqm {
            &config.width_grid[..1]
        } else {
            &config.width_grid
        };
        for &width in widths {
            for eta_index in 0..config.eta_grid.len() {
                for &seed in &config.seeds {
                    cells.push((family, width, eta_index, seed));
                }
            }
        }
    }
    cells
}

/// Trains every `(family, width, η, seed)` cell, in parallel, and records
/// regime, best train and test loss, best test accuracy and kernel summary.
/// A failing cell is recorded and the sweep carries on. Results are in grid
/// order regardless of scheduling.
pub fn lr_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let cells = grid(config)
        .into_par_iter()
        .map(|(family, width, eta_index, seed)| CellResult {
            family,
            width,
            eta_index,
            seed,
            outcome: match run_cell(config, family, width, eta_index, seed) {
                Ok(s) => CellOutcome::Completed(Box::new(s)),
                Err(e) => CellOutcome::Failed { error: e.to_string() },
            },
        })
        .collect();
    Ok(SweepResult {
        config_hash: config.hash(),
        cells,
    })
}

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::closed_form::{general_residual_corrections, multi_dynamics_step, scalar_dynamics_step};
use super::{check_eta, descend_from};
use crate::error::{Error, Result};
use crate::linalg::{normalized, symmetric_eigen};
use crate::models::{AnchoredModel, Dataset, Evaluation, Family, Trainable};
use crate::rng;

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

/// How kernel eigenvalues are tracked along a run.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelTracking {
    None,
    /// Rayleigh quotients `p̂ᵀKp̂` along the tracked directions. Exact
    /// eigenvalues whenever the directions are kernel eigenvectors.
    Directions,
    /// Top three eigenvalues of the full kernel every `every` steps.
    Full { every: usize },
}

#[derive(Debug, Clone)]
pub struct RecorderOptions {
    pub max_steps: usize,
    pub kernel: KernelTracking,
    /// Directions for the projected losses `½⟨g − y, p̂⟩²`.
    pub directions: Vec<DVector<f64>>,
    pub record_outputs: bool,
    /// Frobenius norms of the correction matrices (quadratic models only).
    pub corrections: bool,
    /// Held-out data and evaluation cadence in steps.
    pub test: Option<(Dataset, usize)>,
    /// `Some((batch_size, seed))` selects minibatch SGD.
    pub sgd: Option<(usize, u64)>,
    pub divergence_threshold: f64,
    pub stop_on_convergence: bool,
}

impl RecorderOptions {
    pub fn new(max_steps: usize) -> Self {
        Self {
            max_steps,
            kernel: KernelTracking::None,
            directions: Vec::new(),
            record_outputs: false,
            corrections: false,
            test: None,
            sgd: None,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            stop_on_convergence: true,
        }
    }

    pub fn kernel(mut self, tracking: KernelTracking) -> Self {
        self.kernel = tracking;
        self
    }

    pub fn directions(mut self, directions: Vec<DVector<f64>>) -> Self {
        self.directions = directions;
        self
    }

    pub fn outputs(mut self) -> Self {
        self.record_outputs = true;
        self
    }

    pub fn corrections(mut self) -> Self {
        self.corrections = true;
        self
    }

    pub fn test_set(mut self, data: Dataset, every: usize) -> Self {
        self.test = Some((data, every.max(1)));
        self
    }

    pub fn sgd(mut self, batch_size: usize, seed: u64) -> Self {
        self.sgd = Some((batch_size, seed));
        self
    }

    pub fn run_to_budget(mut self) -> Self {
        self.stop_on_convergence = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    Diverged { step: usize },
    NonFinite { step: usize },
    Converged { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Per-step record of a run. Every per-step array has one entry per
/// recorded step; entries that were not computed are NaN.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    pub eta: f64,
    pub loss: Vec<f64>,
    pub residual_norm: Vec<f64>,
    pub outputs: Vec<DVector<f64>>,
    /// `lambdas[i][t]`: i-th tracked eigenvalue at step t.
    pub lambdas: Vec<Vec<f64>>,
    /// `projected[i][t]`: projected loss along direction i at step t.
    pub projected: Vec<Vec<f64>>,
    pub rf_norm: Vec<f64>,
    pub rk_norm: Vec<f64>,
    pub param_disp: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub stop: Option<StopReason>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn initial_loss(&self) -> f64 {
        self.loss[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().expect("nonempty trajectory")
    }

    /// `(step, loss)` of the largest recorded loss; non-finite counts as largest.
    pub fn peak(&self) -> (usize, f64) {
        series_peak(&self.loss)
    }

    /// Eigenvalue series `i`, or an empty slice.
    pub fn lambda(&self, i: usize) -> &[f64] {
        self.lambdas.get(i).map_or(&[], |v| v.as_slice())
    }

    pub fn best_test(&self) -> Option<EvalPoint> {
        let best_loss = self.evals.iter().min_by(|a, b| a.loss.total_cmp(&b.loss))?;
        let best_acc = self.evals.iter().map(|e| e.accuracy).fold(f64::NEG_INFINITY, f64::max);
        Some(EvalPoint {
            step: best_loss.step,
            loss: best_loss.loss,
            accuracy: best_acc,
        })
    }

    pub fn min_loss(&self) -> f64 {
        self.loss.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub const CSV_HEADER: &'static str = "step,loss,lambda1,lambda2,pi1_loss,pi2_loss,param_disp,rf_norm,rk_norm";

    /// CSV with the fixed trajectory header; missing quantities are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        let cell = |v: Option<&f64>| match v {
            Some(x) if !x.is_nan() => format!("{x:e}"),
            _ => String::new(),
        };
        for t in 0..self.len() {
            let l = |i: usize| cell(self.lambdas.get(i).and_then(|s| s.get(t)));
            let p = |i: usize| cell(self.projected.get(i).and_then(|s| s.get(t)));
            writeln!(
                out,
                "{t},{},{},{},{},{},{},{},{}",
                cell(Some(&self.loss[t])),
                l(0),
                l(1),
                p(0),
                p(1),
                cell(self.param_disp.get(t)),
                cell(self.rf_norm.get(t)),
                cell(self.rk_norm.get(t)),
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn series_peak(series: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (t, &v) in series.iter().enumerate() {
        if !v.is_finite() {
            return (t, f64::INFINITY);
        }
        if v > best.1 {
            best = (t, v);
        }
    }
    best
}

/// Relative one-step loss change below which a run counts as converged.
const STALL: f64 = 1e-13;

struct Recorder<'a> {
    opts: &'a RecorderOptions,
    labels: &'a DVector<f64>,
    units: Vec<DVector<f64>>,
    rec: TrajectoryRecord,
    floor: f64,
}

impl<'a> Recorder<'a> {
    fn new(opts: &'a RecorderOptions, labels: &'a DVector<f64>, eta: f64) -> Result<Self> {
        let units = opts
            .directions
            .iter()
            .map(|d| {
                if d.len() != labels.len() {
                    return Err(Error::Dimension {
                        context: "tracked direction",
                        expected: labels.len(),
                        actual: d.len(),
                    });
                }
                normalized(d).ok_or_else(|| Error::Argument("zero tracked direction".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let series = match opts.kernel {
            KernelTracking::None => 0,
            KernelTracking::Directions => units.len(),
            KernelTracking::Full { .. } => 3,
        };
        Ok(Self {
            opts,
            labels,
            rec: TrajectoryRecord {
                eta,
                lambdas: vec![Vec::new(); series],
                projected: vec![Vec::new(); units.len()],
                ..Default::default()
            },
            units,
            floor: 0.0,
        })
    }

    /// Records step `t`; returns a stop reason when the run should end.
    fn push(&mut self, t: usize, outputs: &DVector<f64>, lambdas: Vec<f64>, disp: f64, rf: f64, rk: f64) -> Option<StopReason> {
        let r = outputs - self.labels;
        let loss = 0.5 * r.norm_squared();
        let rec = &mut self.rec;
        let stalled = rec.loss.last().is_some_and(|&prev| (loss - prev).abs() <= STALL * prev);
        rec.loss.push(loss);
        rec.residual_norm.push(r.norm());
        if self.opts.record_outputs {
            rec.outputs.push(outputs.clone());
        }
        for (i, series) in rec.lambdas.iter_mut().enumerate() {
            series.push(lambdas.get(i).copied().unwrap_or(f64::NAN));
        }
        for (p, series) in self.units.iter().zip(rec.projected.iter_mut()) {
            let proj = r.dot(p);
            series.push(0.5 * proj * proj);
        }
        rec.param_disp.push(disp);
        rec.rf_norm.push(rf);
        rec.rk_norm.push(rk);
        if t == 0 {
            self.floor = (1e-10 * loss).max(1e-14);
        }
        if !loss.is_finite() {
            Some(StopReason::NonFinite { step: t })
        } else if loss > self.opts.divergence_threshold {
            Some(StopReason::Diverged { step: t })
        } else if self.opts.stop_on_convergence && (loss < self.floor || stalled) {
            Some(StopReason::Converged { step: t })
        } else if t >= self.opts.max_steps {
            Some(StopReason::Completed)
        } else {
            None
        }
    }

    fn wants_full_kernel(&self, t: usize) -> bool {
        matches!(self.opts.kernel, KernelTracking::Full { every } if t % every.max(1) == 0)
    }

    fn lambdas_from_kernel(&self, t: usize, k: &DMatrix<f64>) -> Vec<f64> {
        match self.opts.kernel {
            KernelTracking::None => Vec::new(),
            KernelTracking::Directions => self.units.iter().map(|p| p.dot(&(k * p))).collect(),
            KernelTracking::Full { .. } if self.wants_full_kernel(t) => {
                symmetric_eigen(k).values.into_iter().take(3).collect()
            }
            KernelTracking::Full { .. } => Vec::new(),
        }
    }

    fn finish(mut self, stop: StopReason) -> TrajectoryRecord {
        self.rec.stop = Some(stop);
        self.rec
    }
}

fn test_point<M: Trainable>(model: &M, test: &Dataset, step: usize) -> Option<EvalPoint> {
    let out = model.predict(&test.inputs).ok()?;
    Some(EvalPoint {
        step,
        loss: test.loss(&out),
        accuracy: test.accuracy(&out),
    })
}

/// Runs gradient descent from `model` and records the trajectory.
///
/// Recording happens at the parameters before each update, so step 0 is the
/// initial state and at most `max_steps` updates are applied. The run stops
/// early when the loss exceeds the divergence threshold or becomes
/// non-finite, or (unless disabled) when it falls below
/// `max(1e-10·L(0), 1e-14)` or changes by less than `1e-13·L` in one step.
pub fn simulate<M: Trainable>(model: &M, data: &Dataset, eta: f64, opts: &RecorderOptions) -> Result<TrajectoryRecord> {
    train(model.clone(), data, eta, opts).map(|(rec, _)| rec)
}

/// Same as [`simulate`], but consumes the model and also returns it in its
/// final state.
pub fn train<M: Trainable>(mut model: M, data: &Dataset, eta: f64, opts: &RecorderOptions) -> Result<(TrajectoryRecord, M)> {
    check_eta(eta)?;
    model.prepare(&data.inputs)?;
    let mut rec = Recorder::new(opts, &data.labels, eta)?;
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut cursor = order.len();
    let mut batch_rng = opts.sgd.map(|(_, seed)| rng::stream(seed, rng::streams::BATCH));
    for t in 0.. {
        let eval = match model.evaluate_batch(&data.inputs) {
            Ok(e) => e,
            Err(Error::NonFinite { .. }) => {
                let nan = DVector::from_element(data.n(), f64::NAN);
                rec.push(t, &nan, Vec::new(), f64::NAN, f64::NAN, f64::NAN);
                return Ok((rec.finish(StopReason::NonFinite { step: t }), model));
            }
            Err(e) => return Err(e),
        };
        let needs_kernel = match opts.kernel {
            KernelTracking::None => false,
            KernelTracking::Directions => false,
            KernelTracking::Full { .. } => rec.wants_full_kernel(t),
        };
        let lambdas = if needs_kernel {
            rec.lambdas_from_kernel(t, &eval.kernel())
        } else if opts.kernel == KernelTracking::Directions {
            rec.units.iter().map(|p| eval.pullback(p).norm_squared()).collect()
        } else {
            Vec::new()
        };
        let (rf, rk) = if opts.corrections {
            match general_residual_corrections(&model, data, eta) {
                Ok(c) => (c.r_f.norm(), c.r_k.norm()),
                Err(_) => (f64::NAN, f64::NAN),
            }
        } else {
            (f64::NAN, f64::NAN)
        };
        if let Some((test, every)) = &opts.test {
            if t % every == 0 {
                if let Some(p) = test_point(&model, test, t) {
                    rec.rec.evals.push(p);
                }
            }
        }
        if let Some(stop) = rec.push(t, eval.outputs(), lambdas, model.displacement(), rf, rk) {
            return Ok((rec.finish(stop), model));
        }
        let stepped = match (opts.sgd, batch_rng.as_mut()) {
            (Some((batch_size, _)), Some(r)) => {
                let size = batch_size.clamp(1, order.len());
                if cursor + size > order.len() {
                    order.shuffle(r);
                    cursor = 0;
                }
                let batch = data.subset(&order[cursor..cursor + size])?;
                cursor += size;
                let beval = model.evaluate_batch(&batch.inputs);
                beval.and_then(|e| descend_from(&mut model, &e, &batch.labels, eta))
            }
            _ => descend_from(&mut model, &eval, &data.labels, eta),
        };
        match stepped {
            Ok(_) => {}
            Err(Error::NonFinite { .. }) => {
                let nan = DVector::from_element(data.n(), f64::NAN);
                rec.push(t + 1, &nan, Vec::new(), f64::NAN, f64::NAN, f64::NAN);
                return Ok((rec.finish(StopReason::NonFinite { step: t + 1 }), model));
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("loop exits through a stop reason")
}

/// Runs the closed-form recursion for a quadratic model instead of
/// parameter-space descent.
///
/// One example: the scalar `(g, λ)` recursion, with `lambdas[0] = λ`.
/// One-dimensional data: the rank-two `(g, K)` recursion; eigenvalues are
/// tracked as requested by `opts.kernel`. Parameter displacement is not
/// available (NaN).
pub fn simulate_closed_form(model: &AnchoredModel, data: &Dataset, eta: f64, opts: &RecorderOptions) -> Result<TrajectoryRecord> {
    check_eta(eta)?;
    if model.family() != Family::Nqm {
        return Err(Error::Argument(format!(
            "closed-form dynamics describe the quadratic model, not `{}`",
            model.family()
        )));
    }
    let eval = model.evaluate(&data.inputs)?;
    let mut g = eval.outputs.clone();
    let mut k = eval.kernel();
    let m = model.width();
    let nan = f64::NAN;
    if data.n() == 1 {
        let mut rec = Recorder::new(opts, &data.labels, eta)?;
        rec.rec.lambdas = vec![Vec::new()];
        let coupling = data.input(0).norm_squared() / (m * data.d()) as f64;
        let (mut gs, mut lambda, y) = (g[0], k[(0, 0)], data.labels[0]);
        for t in 0.. {
            if let Some(stop) = rec.push(t, &DVector::from_element(1, gs), vec![lambda], nan, nan, nan) {
                return Ok(rec.finish(stop));
            }
            (gs, lambda) = scalar_dynamics_step(gs, lambda, y, eta, coupling);
        }
        unreachable!("loop exits through a stop reason")
    }
    data.require_one_dimensional()?;
    let mut rec = Recorder::new(opts, &data.labels, eta)?;
    for t in 0.. {
        let lambdas = rec.lambdas_from_kernel(t, &k);
        if let Some(stop) = rec.push(t, &g, lambdas, nan, nan, nan) {
            return Ok(rec.finish(stop));
        }
        (g, k) = multi_dynamics_step(&g, &k, data, eta, m)?;
    }
    unreachable!("loop exits through a stop reason")
}

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DatasetSpec, EtaGrid, ExperimentConfig, ModelKind};
use super::datasets::gen_gaussian_1d;
use super::sweep::{build_cell, fmt_opt, mean_std, tracked_directions, AnyModel, Task};
use crate::dynamics::{
    classify_regime, confined_corrections, train, KernelTracking, RecorderOptions, Regime, StopReason, Tolerances,
};
use crate::error::{Error, Result};
use crate::kernel::{ordered_rank2_directions, tangent_kernel};
use crate::linalg::symmetric_eigen;
use crate::models::{AnchoredModel, Dataset, Evaluation, Family, Trainable};

/// Peak statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakRun {
    pub seed: u64,
    pub eta: f64,
    pub lambda0: f64,
    pub initial_loss: f64,
    pub peak_loss: f64,
    pub final_loss: f64,
    /// `(λ₀ − λ_final)/λ₀`; absent when the run blew up.
    pub kernel_drop: Option<f64>,
    /// `η·λ_final`; absent when the run blew up.
    pub final_eta_lambda: Option<f64>,
    pub regime: Option<Regime>,
    pub stop: StopReason,
}

impl PeakRun {
    pub fn peak_ratio(&self) -> f64 {
        self.peak_loss / self.initial_loss
    }
}

fn peak_run<M: Trainable>(model: M, task: &Task, eta_of: impl Fn(f64) -> f64, steps: usize, tol: &Tolerances, seed: u64) -> Result<PeakRun> {
    let lambda0 = tangent_kernel(&model, &task.train)?.lambda_max();
    let eta = eta_of(lambda0);
    let dirs = tracked_directions(&model, &task.train)?;
    let mut opts = RecorderOptions::new(steps).directions(dirs).kernel(KernelTracking::Directions);
    opts.divergence_threshold = tol.divergence_threshold;
    let (rec, last) = train(model, &task.train, eta, &opts)?;
    let stop = rec.stop.clone().expect("finished runs carry a stop reason");
    let blew_up = matches!(stop, StopReason::Diverged { .. } | StopReason::NonFinite { .. });
    let lambda_final = if blew_up {
        None
    } else {
        Some(tangent_kernel(&last, &task.train)?.lambda_max())
    };
    Ok(PeakRun {
        seed,
        eta,
        lambda0,
        initial_loss: rec.initial_loss(),
        peak_loss: rec.peak().1,
        final_loss: rec.final_loss(),
        kernel_drop: lambda_final.map(|l| (lambda0 - l) / lambda0),
        final_eta_lambda: lambda_final.map(|l| eta * l),
        regime: classify_regime(&rec, None, tol).ok().map(|r| r.regime),
        stop,
    })
}

fn peak_run_any(model: AnyModel, task: &Task, eta_of: impl Fn(f64) -> f64, steps: usize, tol: &Tolerances, seed: u64) -> Result<PeakRun> {
    match model {
        AnyModel::Anchored(m) => peak_run(m, task, eta_of, steps, tol, seed),
        AnyModel::Quadratic(m) => peak_run(m, task, eta_of, steps, tol, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthRow {
    pub width: usize,
    pub mean_peak_loss: f64,
    pub mean_peak_ratio: f64,
    /// Mean relative kernel drop over runs that did not blow up.
    pub mean_kernel_drop: Option<f64>,
    /// Peak ratio of one sub-critical control run at `η = 1/λ₀`.
    pub control_peak_ratio: f64,
    pub catapult_runs: usize,
    pub runs: Vec<PeakRun>,
}

/// Peak loss and kernel drop against width at fixed `δ = ηλ₀ − 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthStudy {
    pub config_hash: String,
    pub delta: f64,
    pub rows: Vec<WidthRow>,
    /// Least-squares slope of `log(mean peak)` against `log(width)`.
    pub slope: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, _) = mean_std(xs);
    let (my, _) = mean_std(ys);
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn network_family(config: &ExperimentConfig) -> Result<ModelKind> {
    match config.families.first() {
        Some(&k) if k != ModelKind::Gqm => Ok(k),
        _ => Err(Error::config("families", "this study needs a network, linearized or nqm family first")),
    }
}

/// For every width and seed, trains at `η = (2 + δ)/λ₀` and records the
/// peak loss and relative kernel drop. Also runs one `η = 1/λ₀` control per
/// width.
pub fn width_scaling_study(config: &ExperimentConfig) -> Result<WidthStudy> {
    config.validate()?;
    if config.width_grid.len() < 2 {
        return Err(Error::config("width_grid", "the width study needs at least two widths"));
    }
    let family = network_family(config)?;
    let delta = config.delta;
    let steps = config.max_steps;
    let tol = config.tolerances;
    let mut jobs: Vec<(usize, u64, bool)> = Vec::new();
    for &w in &config.width_grid {
        jobs.extend(config.seeds.iter().map(|&s| (w, s, false)));
        jobs.push((w, config.seeds[0], true));
    }
    let results: Vec<Result<PeakRun>> = jobs
        .par_iter()
        .map(|&(width, seed, control)| {
            let (model, task) = build_cell(config, family, width, seed)?;
            let factor = if control { 1.0 } else { 2.0 + delta };
            peak_run_any(model, &task, |l0| factor / l0, steps, &tol, seed)
        })
        .collect();
    let mut results = results.into_iter();
    let mut rows = Vec::new();
    for &width in &config.width_grid {
        let runs = (&mut results).take(config.seeds.len()).collect::<Result<Vec<_>>>()?;
        let control = results.next().expect("one control per width")?;
        let peaks: Vec<f64> = runs.iter().map(|r| r.peak_loss).collect();
        let ratios: Vec<f64> = runs.iter().map(PeakRun::peak_ratio).collect();
        let drops: Vec<f64> = runs.iter().filter_map(|r| r.kernel_drop).collect();
        rows.push(WidthRow {
            width,
            mean_peak_loss: mean_std(&peaks).0,
            mean_peak_ratio: mean_std(&ratios).0,
            mean_kernel_drop: (!drops.is_empty()).then(|| mean_std(&drops).0),
            control_peak_ratio: control.peak_ratio(),
            catapult_runs: runs.iter().filter(|r| r.regime == Some(Regime::Catapult)).count(),
            runs,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.width as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_peak_loss.ln()).collect();
    Ok(WidthStudy {
        config_hash: config.hash(),
        delta,
        slope: fit_slope(&xs, &ys),
        rows,
    })
}

impl WidthStudy {
    /// `width,mean_peak_loss,mean_peak_ratio,mean_kernel_drop,control_peak_ratio,catapult_runs,runs`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "width,mean_peak_loss,mean_peak_ratio,mean_kernel_drop,control_peak_ratio,catapult_runs,runs"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{},{:e},{},{}",
                r.width,
                r.mean_peak_loss,
                r.mean_peak_ratio,
                fmt_opt(r.mean_kernel_drop),
                r.control_peak_ratio,
                r.catapult_runs,
                r.runs.len()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub eta: f64,
    /// Mean peak over runs that did not diverge.
    pub mean_peak_loss: Option<f64>,
    pub mean_kernel_drop: Option<f64>,
    pub monotonic: usize,
    pub catapult: usize,
    pub divergent: usize,
    pub unclassified: usize,
    pub runs: Vec<PeakRun>,
}

/// Peak loss and kernel drop against the curvature scale γ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaStudy {
    pub config_hash: String,
    pub rows: Vec<GammaRow>,
}

/// For every γ in `gamma_grid`, η in `eta_grid` and seed, trains the random
/// quadratic model and records peak loss, kernel drop and regime. Divergent
/// runs are counted, not treated as errors.
pub fn gamma_scaling_study(config: &ExperimentConfig) -> Result<GammaStudy> {
    config.validate()?;
    if !matches!(config.dataset, DatasetSpec::GqmRandom { .. }) {
        return Err(Error::config("dataset", "the gamma study needs a gqm-random dataset"));
    }
    let tol = config.tolerances;
    let mut jobs = Vec::new();
    for &gamma in &config.gamma_grid {
        for eta_index in 0..config.eta_grid.len() {
            for &seed in &config.seeds {
                jobs.push((gamma, eta_index, seed));
            }
        }
    }
    let results: Vec<Result<PeakRun>> = jobs
        .par_iter()
        .map(|&(gamma, eta_index, seed)| {
            let cfg = ExperimentConfig { gamma, ..config.clone() };
            let (model, task) = build_cell(&cfg, ModelKind::Gqm, cfg.width_grid[0], seed)?;
            let eta_of = |l0: f64| cfg.eta_grid.eta(eta_index, 2.0 / l0);
            peak_run_any(model, &task, eta_of, cfg.max_steps, &tol, seed)
        })
        .collect();
    let mut results = results.into_iter();
    let mut rows = Vec::new();
    for &gamma in &config.gamma_grid {
        for _ in 0..config.eta_grid.len() {
            let runs = (&mut results).take(config.seeds.len()).collect::<Result<Vec<_>>>()?;
            let count = |g: Option<Regime>| runs.iter().filter(|r| r.regime == g).count();
            let calm: Vec<&PeakRun> = runs.iter().filter(|r| r.regime != Some(Regime::Divergent)).collect();
            let peaks: Vec<f64> = calm.iter().map(|r| r.peak_loss).collect();
            let drops: Vec<f64> = calm.iter().filter_map(|r| r.kernel_drop).collect();
            rows.push(GammaRow {
                gamma,
                eta: mean_std(&runs.iter().map(|r| r.eta).collect::<Vec<_>>()).0,
                mean_peak_loss: (!peaks.is_empty()).then(|| mean_std(&peaks).0),
                mean_kernel_drop: (!drops.is_empty()).then(|| mean_std(&drops).0),
                monotonic: count(Some(Regime::Monotonic)),
                catapult: count(Some(Regime::Catapult)),
                divergent: count(Some(Regime::Divergent)),
                unclassified: count(None),
                runs,
            });
        }
    }
    Ok(GammaStudy {
        config_hash: config.hash(),
        rows,
    })
}

impl GammaStudy {
    /// `gamma,eta,mean_peak_loss,mean_kernel_drop,monotonic,catapult,divergent,unclassified`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "gamma,eta,mean_peak_loss,mean_kernel_drop,monotonic,catapult,divergent,unclassified"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{:e},{},{},{},{},{},{}",
                r.gamma,
                r.eta,
                fmt_opt(r.mean_peak_loss),
                fmt_opt(r.mean_kernel_drop),
                r.monotonic,
                r.catapult,
                r.divergent,
                r.unclassified
            )?;
        }
        Ok(())
    }
}

/// One step of the top-eigenspace trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenspaceRow {
    pub step: usize,
    /// `p₁ᵀR_f p₁` for the top kernel eigenvector `p₁`.
    pub p1_rf_p1: f64,
    /// `p₁ᵀR_K p₁`.
    pub p1_rk_p1: f64,
    pub lambda1: f64,
    pub pi1_loss: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenspaceTrace {
    pub config_hash: String,
    pub family: Family,
    pub eta: f64,
    pub rows: Vec<EigenspaceRow>,
}

impl EigenspaceTrace {
    /// `step,p1_rf_p1,p1_rk_p1,lambda1,pi1_loss,loss`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,p1_rf_p1,p1_rk_p1,lambda1,pi1_loss,loss")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                fmt_opt(Some(r.p1_rf_p1)),
                fmt_opt(Some(r.p1_rk_p1)),
                fmt_opt(Some(r.lambda1)),
                fmt_opt(Some(r.pi1_loss)),
                fmt_opt(Some(r.loss))
            )?;
        }
        Ok(())
    }

    pub fn peak_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn peak_pi1_loss(&self) -> f64 {
        self.rows.iter().map(|r| r.pi1_loss).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Follows a run and records, at each step, the residual corrections
/// projected on the top kernel eigenvector `p₁`.
///
/// `p₁` starts as the top eigenvector of `K(0)` and then follows it: at each
/// step it is the eigenvector of `K(t)` with the largest overlap with the
/// previous `p₁`. After a catapult the eigenvalue along `p₁` can fall below
/// another one; `p₁` keeps naming the direction that catapulted.
///
/// For the quadratic model they come from the closed-form Hessian. For the
/// network they are read off the next step: `p₁ᵀR_f p₁ = ⟨p₁, r′⟩/⟨p₁, r⟩ −
/// (1 − ηλ₁)` and `p₁ᵀR_K p₁ = λ₁ − p₁ᵀK′p₁`.
pub fn top_eigenspace_trace(model: &AnchoredModel, data: &Dataset, eta: f64, steps: usize, tol: &Tolerances) -> Result<EigenspaceTrace> {
    let family = model.family();
    if family == Family::Linearized {
        return Err(Error::Argument("the eigenspace study needs the nqm or network family".into()));
    }
    let mut model = model.clone();
    model.prepare(&data.inputs)?;
    let mut rows: Vec<EigenspaceRow> = Vec::new();
    let mut eval = model.evaluate_batch(&data.inputs)?;
    let mut floor = 0.0;
    let mut followed: Option<DVector<f64>> = None;
    for step in 0..=steps {
        let r = eval.outputs() - &data.labels;
        let loss = 0.5 * r.norm_squared();
        if step == 0 {
            floor = (1e-10 * loss).max(1e-14);
        }
        if !loss.is_finite() || loss > tol.divergence_threshold {
            break;
        }
        let eig = symmetric_eigen(&eval.kernel());
        let pick = match &followed {
            None => 0,
            Some(prev) => (0..eig.values.len())
                .max_by(|&i, &j| {
                    let overlap = |k: usize| eig.vectors.column(k).dot(prev).abs();
                    overlap(i).total_cmp(&overlap(j)).then(j.cmp(&i))
                })
                .expect("kernel is nonempty"),
        };
        let lambda1 = eig.values[pick];
        let mut p1: DVector<f64> = eig.vectors.column(pick).into_owned();
        if followed.as_ref().is_some_and(|prev| p1.dot(prev) < 0.0) {
            p1.neg_mut();
        }
        followed = Some(p1.clone());
        let along = p1.dot(&r);
        let last = step == steps || loss < floor;
        let (rf, rk, next) = match family {
            Family::Nqm => {
                let (rf, rk) = confined_corrections(&eval, &data.labels, eta, &p1)?;
                let next = if last {
                    None
                } else {
                    gd_from(&mut model, &eval, &r, eta)?;
                    Some(model.evaluate_batch(&data.inputs)?)
                };
                (rf, rk, next)
            }
            _ => {
                gd_from(&mut model, &eval, &r, eta)?;
                let next = model.evaluate_batch(&data.inputs)?;
                let r_next = next.outputs() - &data.labels;
                let rf = if along == 0.0 {
                    0.0
                } else {
                    p1.dot(&r_next) / along - (1.0 - eta * lambda1)
                };
                let rk = lambda1 - next.pullback(&p1).norm_squared();
                (rf, rk, (!last).then_some(next))
            }
        };
        rows.push(EigenspaceRow {
            step,
            p1_rf_p1: rf,
            p1_rk_p1: rk,
            lambda1,
            pi1_loss: 0.5 * along * along,
            loss,
        });
        match next {
            Some(e) => eval = e,
            None => break,
        }
    }
    Ok(EigenspaceTrace {
        config_hash: String::new(),
        family,
        eta,
        rows,
    })
}

fn gd_from<M: Trainable>(model: &mut M, eval: &M::Eval, r: &DVector<f64>, eta: f64) -> Result<()> {
    let dir = eval.pullback(r);
    if let Some(index) = dir.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            quantity: "update",
            index,
        });
    }
    model.descend(&dir, eta);
    Ok(())
}

/// Top-eigenspace trace for the first family, width and seed of `config`,
/// at the first learning rate of the grid.
pub fn top_eigenspace_study(config: &ExperimentConfig) -> Result<EigenspaceTrace> {
    config.validate()?;
    if config.eta_grid.is_empty() {
        return Err(Error::config("eta_grid", "the eigenspace study needs one learning rate"));
    }
    let kind = network_family(config)?;
    let seed = config.seeds[0];
    let (model, task) = build_cell(config, kind, config.width_grid[0], seed)?;
    let AnyModel::Anchored(model) = model else {
        unreachable!("network families build anchored models")
    };
    let lambda0 = tangent_kernel(&model, &task.train)?.lambda_max();
    let eta = config.eta_grid.eta(0, 2.0 / lambda0);
    let mut trace = top_eigenspace_trace(&model, &task.train, eta, config.max_steps, &config.tolerances)?;
    trace.config_hash = config.hash();
    Ok(trace)
}

/// 1-D data whose two kernel eigenvalues are far enough apart that all
/// three learning-rate bands exist outside the guard bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeBands {
    pub data_seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Half-width `g = 1.5·log(m)/√m` of the guard band, in units of `ηλ`.
    pub guard: f64,
    /// `η < (2 − g)/λ₁`.
    pub below: (f64, f64),
    /// `(2 + g)/λ₁ < η < (2 − g)/λ₂`.
    pub between: (f64, f64),
    /// `(2 + g)/λ₂ < η < (4 − g)/λ₁`.
    pub above: (f64, f64),
}

impl RegimeBands {
    pub fn guard_for(width: usize) -> f64 {
        let m = width as f64;
        1.5 * m.ln() / m.sqrt()
    }

    fn from_eigenvalues(data_seed: u64, lambda1: f64, lambda2: f64, guard: f64) -> Self {
        Self {
            data_seed,
            lambda1,
            lambda2,
            guard,
            below: (0.0, (2.0 - guard) / lambda1),
            between: ((2.0 + guard) / lambda1, (2.0 - guard) / lambda2),
            above: ((2.0 + guard) / lambda2, (4.0 - guard) / lambda1),
        }
    }

    /// Whether the eigenvalue ratio leaves room for every band, with the
    /// middle band at least `g/2` wide in units of `ηλ₁`.
    pub fn usable(&self) -> bool {
        let ratio = self.lambda1 / self.lambda2;
        ratio >= 1.0 + 1.5 * self.guard && self.above.0 < self.above.1
    }

    /// Centre of each band: `[below, between, above]`.
    pub fn midpoints(&self) -> [f64; 3] {
        let mid = |(a, b): (f64, f64)| 0.5 * (a + b);
        [mid(self.below), mid(self.between), mid(self.above)]
    }
}

/// Scans data seeds `0..max_seed` of the 1-D Gaussian mixture for the first
/// one whose initial NQM kernel has usable bands.
pub fn find_two_threshold_dataset(n: usize, width: usize, init_seed: u64, max_seed: u64) -> Result<RegimeBands> {
    let guard = RegimeBands::guard_for(width);
    let anchor = AnchoredModel::initialize(Family::Nqm, width, 1, init_seed)?;
    for data_seed in 0..max_seed {
        let data = gen_gaussian_1d(n, data_seed)?;
        let dirs = ordered_rank2_directions(&anchor, &data)?;
        if dirs.len() < 2 {
            continue;
        }
        let bands = RegimeBands::from_eigenvalues(data_seed, dirs[0].0, dirs[1].0, guard);
        if bands.usable() {
            return Ok(bands);
        }
    }
    Err(Error::Assumption(format!(
        "no data seed below {max_seed} separates the two eigenvalues by 1 + 1.5g"
    )))
}

/// Sweep config for the three-band experiment on found data: one η at the
/// centre of each band.
pub fn two_threshold_config(bands: &RegimeBands, n: usize, width: usize, init_seed: u64, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic1d {
            n,
            seed: bands.data_seed,
            n_test: 0,
        },
        families: vec![ModelKind::Nqm],
        width_grid: vec![width],
        eta_grid: EtaGrid::Values(bands.midpoints().to_vec()),
        seeds: vec![init_seed],
        max_steps: steps,
        keep_traces: true,
        ..ExperimentConfig::synthetic_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| (3.0 * x).ln()).collect();
        assert!((fit_slope(&xs, &ys) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bands_are_ordered() {
        let b = RegimeBands::from_eigenvalues(0, 1.4, 1.0, RegimeBands::guard_for(5000));
        assert!(b.usable());
        assert!(b.below.1 < b.between.0 && b.between.0 < b.between.1 && b.between.1 < b.above.0);
        assert!(!RegimeBands::from_eigenvalues(0, 1.05, 1.0, 0.18).usable());
    }

    #[test]
    fn zero_residual_gives_zero_corrections() {
        let data = Dataset::scalar(&[0.7, -1.2, 0.4], &[0.0, 0.0, 0.0]).unwrap();
        for family in [Family::Nqm, Family::Network] {
            let model = AnchoredModel::initialize(family, 50, 1, 3).unwrap();
            let out = model.evaluate(&data.inputs).unwrap().outputs;
            let fitted = Dataset::new(data.inputs.clone(), out).unwrap();
            let t = top_eigenspace_trace(&model, &fitted, 1.0, 3, &Tolerances::default()).unwrap();
            let first = t.rows[0];
            assert_eq!((first.p1_rf_p1, first.pi1_loss, first.loss), (0.0, 0.0, 0.0));
            assert!(first.p1_rk_p1.abs() < 1e-12 * first.lambda1);
        }
    }
}

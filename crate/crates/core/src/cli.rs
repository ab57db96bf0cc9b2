//! Command-line entry point.
//!
//! Every command reads an [`ExperimentConfig`] (or a built-in default),
//! applies `--set` overrides, runs, and writes its outputs plus a JSON
//! manifest into the output directory. Output file names carry the first
//! eight hex digits of the config hash.
//!
//! Exit codes: 0 on success (diverged cells are data), 2 for config or
//! parse errors, 3 for runtime failures.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dynamics::{classify_regime, simulate, KernelTracking, RecorderOptions, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::experiments::config::{DatasetSpec, ExperimentConfig};
use crate::experiments::studies::{
    gamma_scaling_study, top_eigenspace_study, width_scaling_study, EigenspaceTrace, GammaStudy, WidthStudy,
};
use crate::experiments::sweep::{build_cell, lr_sweep, tracked_directions, AnyModel, SweepResult, Task};
use crate::experiments::verify_suite;
use crate::kernel::{critical_lr, tangent_kernel, RateThresholds};
use crate::models::Trainable;

pub const THREADS_ENV: &str = "NQM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nqm", version, about = "Catapult dynamics of quadratic models and wide networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Verb,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON config file, or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent. Defaults to the config's
    /// `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dotted-path override such as `dataset.n=64`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Use seeds 0..N.
    #[arg(long, global = true)]
    pub seeds: Option<u64>,
    /// Worker threads for parallel grids.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Verb {
    /// Train the first family, width and seed at every grid learning rate.
    Simulate,
    /// Learning-rate sweep over the full grid.
    Sweep,
    /// Print the critical and maximal learning rates as JSON.
    Thresholds,
    /// Peak loss and kernel drop against width at fixed δ.
    WidthStudy,
    /// Peak loss and kernel drop against γ for the random quadratic model.
    GammaStudy,
    /// Confined corrections along the top kernel eigenvector.
    EigenspaceStudy,
    /// Run the built-in property checks.
    Verify,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::Sweep => "sweep",
            Verb::Thresholds => "thresholds",
            Verb::WidthStudy => "width-study",
            Verb::GammaStudy => "gamma-study",
            Verb::EigenspaceStudy => "eigenspace-study",
            Verb::Verify => "verify",
        }
    }

    fn default_config(self) -> ExperimentConfig {
        match self {
            Verb::GammaStudy => ExperimentConfig::gqm_default(),
            _ => ExperimentConfig::synthetic_default(),
        }
    }
}

/// Layouts of the emitted CSV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotStyle {
    /// `step,loss,lambda1,lambda2,pi1_loss,pi2_loss,param_disp,rf_norm,rk_norm`
    Trajectory,
    /// `eta,step,loss,lambda1,lambda2`
    Traces,
    /// `family,eta,best_test_loss,stddev`
    Curves,
    /// `width,mean_peak_loss,mean_peak_ratio,mean_kernel_drop,control_peak_ratio,catapult_runs,runs`
    Width,
    /// `gamma,eta,mean_peak_loss,mean_kernel_drop,monotonic,catapult,divergent,unclassified`
    Gamma,
    /// `step,p1_rf_p1,p1_rk_p1,lambda1,pi1_loss,loss`
    Eigenspace,
}

/// A result that can be written as plot data.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Trajectory(&'a TrajectoryRecord),
    Sweep(&'a SweepResult),
    Width(&'a WidthStudy),
    Gamma(&'a GammaStudy),
    Eigenspace(&'a EigenspaceTrace),
}

/// Writes one CSV of the given style to `path`.
pub fn emit_plot_data(result: PlotSource<'_>, style: PlotStyle, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let written = match (result, style) {
        (PlotSource::Trajectory(r), PlotStyle::Trajectory) => r.write_csv(&mut out),
        (PlotSource::Sweep(r), PlotStyle::Traces) => r.write_traces_csv(&mut out),
        (PlotSource::Sweep(r), PlotStyle::Curves) => r.write_curves_csv(&mut out),
        (PlotSource::Width(r), PlotStyle::Width) => r.write_csv(&mut out),
        (PlotSource::Gamma(r), PlotStyle::Gamma) => r.write_csv(&mut out),
        (PlotSource::Eigenspace(r), PlotStyle::Eigenspace) => r.write_csv(&mut out),
        (_, style) => return Err(Error::Argument(format!("result has no {style:?} view"))),
    };
    written.and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: pass the manifest back as
/// `--config` and the same files are reproduced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub files: Vec<ManifestEntry>,
}

struct Outputs {
    dir: PathBuf,
    prefix: String,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    fn new(dir: &Path, command: &str, hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prefix: format!("{command}-{}", &hash[..8]),
            files: Vec::new(),
        })
    }

    fn path(&self, label: &str, ext: &str) -> (String, PathBuf) {
        let name = if label.is_empty() {
            format!("{}.{ext}", self.prefix)
        } else {
            format!("{}-{label}.{ext}", self.prefix)
        };
        let path = self.dir.join(&name);
        (name, path)
    }

    fn record(&mut self, name: String, path: &Path, kind: &str) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.files.push(ManifestEntry {
            path: name,
            kind: kind.into(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn plot(&mut self, source: PlotSource<'_>, style: PlotStyle, label: &str) -> Result<PathBuf> {
        let (name, path) = self.path(label, "csv");
        emit_plot_data(source, style, &path)?;
        let kind = serde_json::to_value(style).expect("style serializes");
        self.record(name, &path, kind.as_str().unwrap_or("csv"))?;
        Ok(path)
    }

    fn json(&mut self, text: &str, label: &str, kind: &str) -> Result<PathBuf> {
        let (name, path) = self.path(label, "json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.record(name, &path, kind)?;
        Ok(path)
    }
}

fn effective_config(verb: Verb, common: &CommonArgs) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => verb.default_config(),
    };
    let mut config = base.apply_overrides(&common.overrides)?;
    if let Some(n) = common.seeds {
        if n == 0 {
            return Err(Error::config("seeds", "--seeds must be at least 1"));
        }
        config.seeds = (0..n).collect();
    }
    config.validate()?;
    Ok(config)
}

/// Runs a parsed command. Returns the manifest that was written.
pub fn run_command(cli: &Cli) -> Result<Manifest> {
    let verb = cli.command;
    let config = effective_config(verb, &cli.common)?;
    let hash = config.hash();
    let dir = cli.common.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let mut out = Outputs::new(&dir, verb.name(), &hash)?;
    let mut run = || -> Result<()> {
        match verb {
            Verb::Simulate => run_simulate(&config, &mut out),
            Verb::Sweep => {
                let result = lr_sweep(&config)?;
                for line in result.report_lines() {
                    println!("{line}");
                }
                out.plot(PlotSource::Sweep(&result), PlotStyle::Curves, "curves")?;
                out.plot(PlotSource::Sweep(&result), PlotStyle::Traces, "traces")?;
                out.json(&result.to_json(), "cells", "sweep-cells")?;
                Ok(())
            }
            Verb::Thresholds => {
                let report = thresholds_report(&config)?;
                let text = serde_json::to_string_pretty(&report).expect("thresholds serialize");
                println!("{text}");
                out.json(&text, "", "thresholds")?;
                Ok(())
            }
            Verb::WidthStudy => {
                let study = width_scaling_study(&config)?;
                println!("log-log slope of mean peak loss against width: {:.3}", study.slope);
                out.plot(PlotSource::Width(&study), PlotStyle::Width, "")?;
                Ok(())
            }
            Verb::GammaStudy => {
                let study = gamma_scaling_study(&config)?;
                out.plot(PlotSource::Gamma(&study), PlotStyle::Gamma, "")?;
                Ok(())
            }
            Verb::EigenspaceStudy => {
                let trace = top_eigenspace_study(&config)?;
                out.plot(PlotSource::Eigenspace(&trace), PlotStyle::Eigenspace, "")?;
                Ok(())
            }
            Verb::Verify => {
                let outcomes = verify_suite();
                for o in &outcomes {
                    println!("{}", o.line());
                }
                let text = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
                out.json(&text, "", "verify")?;
                match outcomes.iter().find(|o| !o.passed) {
                    Some(o) => Err(Error::Assumption(format!("check `{}` failed", o.name))),
                    None => Ok(()),
                }
            }
        }
    };
    let outcome = run();
    let manifest = Manifest {
        command: verb.name().into(),
        config_hash: hash,
        seeds: config.seeds.clone(),
        config,
        overrides: cli.common.overrides.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        files: std::mem::take(&mut out.files),
    };
    let (_, path) = out.path("manifest", "json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    outcome.map(|_| manifest)
}

fn with_model<T>(model: AnyModel, f: impl FnOnce(&dyn ErasedRun) -> Result<T>) -> Result<T> {
    match model {
        AnyModel::Anchored(m) => f(&m),
        AnyModel::Quadratic(m) => f(&m),
    }
}

trait ErasedRun {
    fn thresholds(&self, task: &Task) -> Result<RateThresholds>;
    fn run(&self, task: &Task, eta: f64, opts: &RecorderOptions) -> Result<TrajectoryRecord>;
    fn directions(&self, task: &Task) -> Result<Vec<nalgebra::DVector<f64>>>;
}

impl<M: Trainable> ErasedRun for M {
    fn thresholds(&self, task: &Task) -> Result<RateThresholds> {
        critical_lr(&tangent_kernel(self, &task.train)?)
    }

    fn run(&self, task: &Task, eta: f64, opts: &RecorderOptions) -> Result<TrajectoryRecord> {
        simulate(self, &task.train, eta, opts)
    }

    fn directions(&self, task: &Task) -> Result<Vec<nalgebra::DVector<f64>>> {
        tracked_directions(self, &task.train)
    }
}

#[derive(Debug, Serialize)]
struct ThresholdsReport {
    config_hash: String,
    family: String,
    width: usize,
    seed: u64,
    eta_critical: f64,
    eta_max_estimate: f64,
    /// `2/λᵢ` for each nonzero kernel eigenvalue, largest eigenvalue first.
    per_direction_critical: Vec<f64>,
    thresholds: RateThresholds,
}

fn first_cell(config: &ExperimentConfig) -> Result<(AnyModel, Task)> {
    let width = match config.dataset {
        DatasetSpec::GqmRandom { .. } => 0,
        _ => config.width_grid[0],
    };
    build_cell(config, config.families[0], width, config.seeds[0])
}

fn thresholds_report(config: &ExperimentConfig) -> Result<ThresholdsReport> {
    let (model, task) = first_cell(config)?;
    let thresholds = with_model(model, |m| m.thresholds(&task))?;
    Ok(ThresholdsReport {
        config_hash: config.hash(),
        family: config.families[0].to_string(),
        width: config.width_grid[0],
        seed: config.seeds[0],
        eta_critical: thresholds.eta_critical,
        eta_max_estimate: thresholds.eta_max_estimate,
        per_direction_critical: thresholds.per_direction.iter().map(|d| d.eta_critical).collect(),
        thresholds,
    })
}

fn run_simulate(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (model, task) = first_cell(config)?;
    with_model(model, |m| {
        let thresholds = m.thresholds(&task)?;
        let directions = m.directions(&task)?;
        let tracking = if directions.is_empty() {
            KernelTracking::Full {
                every: config.eval_every,
            }
        } else {
            KernelTracking::Directions
        };
        let mut opts = RecorderOptions::new(config.max_steps).directions(directions).kernel(tracking);
        opts.divergence_threshold = config.tolerances.divergence_threshold;
        if let Some(test) = &task.test {
            opts = opts.test_set(test.clone(), config.eval_every);
        }
        for index in 0..config.eta_grid.len() {
            let eta = config.eta_grid.eta(index, thresholds.eta_critical);
            let rec = m.run(&task, eta, &opts)?;
            let regime = classify_regime(&rec, Some(&thresholds), &config.tolerances)
                .map_or_else(|e| e.to_string(), |r| format!("{:?}", r.regime));
            println!(
                "eta={eta:.6e} eta/eta_c={:.3} steps={} peak={:.4e} final={:.4e} regime={regime}",
                eta / thresholds.eta_critical,
                rec.len() - 1,
                rec.peak().1,
                rec.final_loss()
            );
            out.plot(PlotSource::Trajectory(&rec), PlotStyle::Trajectory, &format!("eta{index}"))?;
        }
        Ok(())
    })
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(threads) = cli.common.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run_command(&cli) {
        Ok(_) => 0,
        Err(e @ (Error::Config { .. } | Error::Parse { .. })) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            let id = effective_config(cli.command, &cli.common)
                .map(|c| format!("{}-{}", cli.command.name(), &c.hash()[..8]))
                .unwrap_or_else(|_| cli.command.name().into());
            eprintln!("error in run {id}: {e}");
            3
        }
    }
}

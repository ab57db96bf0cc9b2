//! Data generation, sweeps and studies.

pub mod checks;
pub mod config;
pub mod datasets;
pub mod studies;
pub mod sweep;

pub use checks::{verify_suite, CheckOutcome};
pub use config::{auto_multiples, DatasetSpec, EtaGrid, ExperimentConfig, ModelKind, Optimizer};
pub use datasets::{gen_gaussian_1d, gen_single_example, gen_twoclass, load_twoclass_csv, write_twoclass_csv};
pub use studies::{
    find_two_threshold_dataset, fit_slope, gamma_scaling_study, top_eigenspace_study, top_eigenspace_trace,
    two_threshold_config, width_scaling_study, EigenspaceRow, EigenspaceTrace, GammaRow, GammaStudy, PeakRun,
    RegimeBands, WidthRow, WidthStudy,
};
pub use sweep::{
    gqm_instance, load_task, lr_sweep, CellOutcome, CellResult, CellSummary, CurvePoint, SweepResult, Task, Trace,
};

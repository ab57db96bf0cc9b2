// Every example runs and produces what it advertises.

mod checkpoint {
    include!("../examples/checkpoint.rs");
}
mod config_overrides {
    include!("../examples/config_overrides.rs");
}
mod eta_max_bisection {
    include!("../examples/eta_max_bisection.rs");
}
mod forward_models {
    include!("../examples/forward_models.rs");
}
mod gamma_scaling {
    include!("../examples/gamma_scaling.rs");
}
mod generalization_sweep {
    include!("../examples/generalization_sweep.rs");
}
mod multi_example_regimes {
    include!("../examples/multi_example_regimes.rs");
}
mod single_example_catapult {
    include!("../examples/single_example_catapult.rs");
}
mod tangent_kernel {
    include!("../examples/tangent_kernel.rs");
}
mod top_eigenspace {
    include!("../examples/top_eigenspace.rs");
}
mod twoclass_data {
    include!("../examples/twoclass_data.rs");
}
mod width_scaling {
    include!("../examples/width_scaling.rs");
}

use nqm::dynamics::{DirectionRegime, Regime};
use nqm::experiments::ModelKind;

#[test]
fn checkpoint_resumes_exactly() {
    assert_eq!(checkpoint::run_example().unwrap(), 0.0);
}

#[test]
fn config_overrides_apply() {
    let tuned = config_overrides::run_example().unwrap();
    assert_eq!(tuned.width_grid, vec![2000]);
    assert_eq!(tuned.tolerances.rise_factor, 3.0);
}

#[test]
fn eta_max_near_four() {
    let found = eta_max_bisection::run_example().unwrap();
    assert!((found - 4.0).abs() < 0.1, "{found}");
}

#[test]
fn quadratic_model_tracks_network_better_than_linear() {
    let (quad_gap, lin_gap) = forward_models::run_example().unwrap();
    assert!(quad_gap < lin_gap, "{quad_gap} vs {lin_gap}");
}

#[test]
fn gamma_scaling_peaks_shrink() {
    let study = gamma_scaling::run_example().unwrap();
    let peaks: Vec<f64> = study.rows.iter().filter_map(|r| r.mean_peak_loss).collect();
    assert!(peaks.len() >= 3);
    assert!(peaks.windows(2).all(|w| w[1] <= w[0] * 1.05), "{peaks:?}");
}

#[test]
fn generalization_sweep_linearized_diverges_above_critical() {
    let result = generalization_sweep::run_example().unwrap();
    let curve = result.curve(ModelKind::Linearized, 1000);
    assert!(curve[0].best_test_loss.is_some());
    assert!(curve.last().unwrap().best_test_loss.is_none());
}

#[test]
fn three_regimes_on_two_directions() {
    let out = multi_example_regimes::run_example().unwrap();
    assert_eq!(out[0].0, Regime::Monotonic);
    assert_eq!(out[1].0, Regime::Catapult);
    assert_eq!(out[1].1, vec![DirectionRegime::Catapult, DirectionRegime::Monotonic]);
    assert_eq!(out[2].1, vec![DirectionRegime::Catapult, DirectionRegime::Catapult]);
}

#[test]
fn single_example_engines_agree() {
    assert!(single_example_catapult::run_example().unwrap() < 1e-8);
}

#[test]
fn tangent_kernel_has_rank_two() {
    let (third, eta_c) = tangent_kernel::run_example().unwrap();
    assert!(third < 1e-8);
    assert!(eta_c > 0.0);
}

#[test]
fn catapult_lives_in_top_eigenspace() {
    for trace in top_eigenspace::run_example().unwrap() {
        let l0 = trace.rows[0].loss;
        for row in trace.rows.iter().filter(|r| r.loss > 10.0 * l0) {
            assert!(row.p1_rf_p1 > 0.0 && row.p1_rk_p1 > 0.0, "{row:?}");
        }
        assert!(trace.peak_pi1_loss() * 2.0 >= trace.peak_loss());
    }
}

#[test]
fn twoclass_data_splits() {
    let dir = tempfile::tempdir().unwrap();
    let counts = twoclass_data::run_example(Some(dir.path().join("two.csv"))).unwrap();
    assert_eq!(counts, (256, 500));
}

#[test]
fn width_scaling_slope_near_one() {
    let study = width_scaling::run_example().unwrap();
    assert!((0.7..=1.3).contains(&study.slope), "{}", study.slope);
}

// Parameter-space descent against the closed forms and the regime rules.

use nalgebra::DVector;
use nqm::dynamics::{
    classify_regime, empirical_eta_max, gd_step, general_residual_corrections, simulate, KernelTracking,
    RecorderOptions, Regime, StopReason, Tolerances,
};
use nqm::experiments::{gen_gaussian_1d, gen_single_example, gen_twoclass};
use nqm::kernel::tangent_kernel;
use nqm::models::{AnchoredModel, Evaluation, Family, Trainable};

#[test]
fn one_step_identity_of_the_corrections() {
    let data = gen_gaussian_1d(4, 21).unwrap();
    let mut model = AnchoredModel::initialize(Family::Nqm, 512, 1, 21).unwrap();
    let eta = 2.7 / tangent_kernel(&model, &data).unwrap().lambda_max();
    for _ in 0..5 {
        let eval = model.evaluate_batch(&data.inputs).unwrap();
        let k = eval.kernel();
        let r = eval.outputs() - &data.labels;
        let c = general_residual_corrections(&model, &data, eta).unwrap();
        let predicted: DVector<f64> = &r - &k * &r * eta + &c.r_f * &r;
        gd_step(&mut model, &data, eta).unwrap();
        let after = model.evaluate_batch(&data.inputs).unwrap();
        let r_next = after.outputs() - &data.labels;
        assert!((&r_next - &predicted).norm() < 1e-8 * r_next.norm().max(r.norm()));
        let k_next = after.kernel();
        assert!((&k_next - (&k - &c.r_k)).norm() < 1e-8 * k.norm());
    }
}

#[test]
fn linearized_subcritical_contracts_at_the_slowest_rate() {
    let data = gen_twoclass(8, 5, 2).unwrap();
    let model = AnchoredModel::initialize(Family::Linearized, 400, 5, 2).unwrap();
    let snap = tangent_kernel(&model, &data).unwrap();
    let eta = 0.9 * 2.0 / snap.lambda_max();
    let eval = model.evaluate_batch(&data.inputs).unwrap();
    let r = eval.outputs() - &data.labels;
    let smallest = (0..snap.eigenvalues.len())
        .filter(|&i| snap.eigenvector(i).dot(&r).abs() > 1e-12)
        .map(|i| snap.eigenvalues[i])
        .fold(f64::INFINITY, f64::min);
    let bound = (1.0 - eta * smallest).powi(2).max((1.0 - eta * snap.lambda_max()).powi(2));
    assert!(smallest > 0.0);
    let rec = simulate(&model, &data, eta, &RecorderOptions::new(200)).unwrap();
    for w in rec.loss.windows(2) {
        assert!(w[1] / w[0] <= bound + 1e-9);
    }
}

#[test]
fn linearized_supercritical_diverges() {
    let data = gen_gaussian_1d(8, 2).unwrap();
    let model = AnchoredModel::initialize(Family::Linearized, 400, 1, 2).unwrap();
    let eta = 2.2 / tangent_kernel(&model, &data).unwrap().lambda_max();
    let rec = simulate(&model, &data, eta, &RecorderOptions::new(3000)).unwrap();
    let report = classify_regime(&rec, None, &Tolerances::default()).unwrap();
    assert_eq!(report.regime, Regime::Divergent);
}

#[test]
fn catapult_signature_at_three_over_lambda() {
    let data = gen_single_example(5, 1.0, 4).unwrap();
    let model = AnchoredModel::initialize(Family::Nqm, 5000, 5, 4).unwrap();
    let lambda0 = tangent_kernel(&model, &data).unwrap().lambda_max();
    let opts = RecorderOptions::new(1000).kernel(KernelTracking::Full { every: 1 });
    let rec = simulate(&model, &data, 3.0 / lambda0, &opts).unwrap();
    assert!(rec.peak().1 > 10.0 * rec.initial_loss());
    assert!(rec.final_loss() < rec.initial_loss());
    assert!(*rec.lambda(0).last().unwrap() < lambda0);
    let report = classify_regime(&rec, None, &Tolerances::default()).unwrap();
    assert_eq!(report.regime, Regime::Catapult);
    assert!(report.kernel_drop > 0.0);
}

fn mean_peak(m: usize) -> f64 {
    let peaks: Vec<f64> = (0..3)
        .map(|seed| {
            let data = gen_single_example(5, 1.0, 1000 + seed).unwrap();
            let model = AnchoredModel::initialize(Family::Nqm, m, 5, seed).unwrap();
            let eta = 3.0 / tangent_kernel(&model, &data).unwrap().lambda_max();
            simulate(&model, &data, eta, &RecorderOptions::new(1000)).unwrap().peak().1
        })
        .collect();
    peaks.iter().sum::<f64>() / peaks.len() as f64
}

#[test]
fn peak_ratio_between_widths_in_calibrated_band() {
    let ratio = mean_peak(8000) / mean_peak(2000);
    assert!((2.0..=8.0).contains(&ratio), "{ratio}");
}

#[test]
fn eta_max_bisection_on_linear_and_quadratic_models() {
    let data = gen_single_example(5, 1.0, 6).unwrap();
    let lin = AnchoredModel::initialize(Family::Linearized, 1000, 5, 6).unwrap();
    let lambda0 = tangent_kernel(&lin, &data).unwrap().lambda_max();
    let found = empirical_eta_max(&lin, &data, (1.0 / lambda0, 3.0 / lambda0), 1000).unwrap();
    assert!((found.estimate * lambda0 - 2.0).abs() < 0.04, "{}", found.estimate * lambda0);
    for &(eta, ok) in &found.probes {
        assert_eq!(ok, eta <= found.lo, "probe {eta}");
    }

    let quad = AnchoredModel::initialize(Family::Nqm, 5000, 5, 6).unwrap();
    let lambda0 = tangent_kernel(&quad, &data).unwrap().lambda_max();
    let found = empirical_eta_max(&quad, &data, (1.0 / lambda0, 6.0 / lambda0), 1000).unwrap();
    let scaled = found.estimate * lambda0;
    assert!((3.6..=4.4).contains(&scaled), "{scaled}");
    assert!(empirical_eta_max(&quad, &data, (3.0 / lambda0, 2.0 / lambda0), 100).is_err());
}

#[test]
fn sgd_is_reproducible() {
    let data = gen_gaussian_1d(64, 5).unwrap();
    let model = AnchoredModel::initialize(Family::Network, 300, 1, 5).unwrap();
    let eta = 1.0 / tangent_kernel(&model, &data).unwrap().lambda_max();
    let opts = RecorderOptions::new(50).sgd(16, 9);
    let a = simulate(&model, &data, eta, &opts).unwrap();
    let b = simulate(&model, &data, eta, &opts).unwrap();
    assert_eq!(a.loss, b.loss);
    let other = simulate(&model, &data, eta, &RecorderOptions::new(50).sgd(16, 10)).unwrap();
    assert_ne!(a.loss, other.loss);
}

#[test]
fn recorded_loss_matches_recorded_outputs() {
    let data = gen_gaussian_1d(16, 8).unwrap();
    let model = AnchoredModel::initialize(Family::Network, 500, 1, 8).unwrap();
    let eta = 2.8 / tangent_kernel(&model, &data).unwrap().lambda_max();
    let rec = simulate(&model, &data, eta, &RecorderOptions::new(300).outputs()).unwrap();
    for (loss, g) in rec.loss.iter().zip(&rec.outputs) {
        let direct = 0.5 * (g - &data.labels).norm_squared();
        assert!((loss - direct).abs() <= 1e-10 * direct.max(f64::MIN_POSITIVE));
    }
}

#[test]
fn subcritical_runs_decrease_and_keep_their_kernel() {
    let data = gen_single_example(5, 1.0, 3).unwrap();
    let model = AnchoredModel::initialize(Family::Nqm, 5000, 5, 3).unwrap();
    let lambda0 = tangent_kernel(&model, &data).unwrap().lambda_max();
    let opts = RecorderOptions::new(1000).kernel(KernelTracking::Full { every: 1 });
    let rec = simulate(&model, &data, 1.0 / lambda0, &opts).unwrap();
    assert!(rec.loss.windows(2).all(|w| w[1] < w[0]));
    assert!(matches!(rec.stop, Some(StopReason::Converged { .. })));
    let drift = rec.lambda(0).iter().map(|l| (l - lambda0).abs() / lambda0).fold(0.0, f64::max);
    assert!(drift < 0.02);
}

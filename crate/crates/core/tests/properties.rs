// Randomized invariants.

use nalgebra::{DMatrix, DVector};
use nqm::dynamics::{gqm_dynamics_step, projected_loss, scalar_dynamics_step, uvw_step, ScalarDynamicsState};
use nqm::experiments::{gen_gaussian_1d, ExperimentConfig};
use nqm::kernel::{critical_lr, rank2_eigenstructure, tangent_kernel, RateThresholds};
use nqm::models::{model_forward, AnchoredModel, Checkpoint, Family};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_step_fixes_a_fitted_output(g in -5.0..5.0f64, lambda in 0.0..3.0f64, eta in 0.01..2.0f64, c in 0.0..0.1f64) {
        let (g2, l2) = scalar_dynamics_step(g, lambda, g, eta, c);
        prop_assert_eq!(g2, g);
        prop_assert_eq!(l2, lambda);
    }

    #[test]
    fn uvw_tracks_the_scalar_recursion(
        g in -1.0..1.0f64,
        y in -1.0..1.0f64,
        lambda in 0.5..1.5f64,
        v0 in 0.2..3.5f64,
        c in 1e-4..1e-2f64,
    ) {
        let eta = v0 / lambda;
        let (mut g, mut lambda) = (g, lambda);
        let mut state = ScalarDynamicsState::from_output(g, lambda, y, eta, c);
        for _ in 0..50 {
            let expect = ScalarDynamicsState::from_output(g, lambda, y, eta, c);
            let scale = 1.0 + expect.u.abs() + expect.v.abs();
            prop_assert!((state.u - expect.u).abs() <= 1e-10 * scale);
            prop_assert!((state.v - expect.v).abs() <= 1e-10 * scale);
            prop_assert!((state.w - expect.w).abs() <= 1e-10 * scale);
            if expect.u > 1e6 {
                break;
            }
            state = uvw_step(state).0;
            (g, lambda) = scalar_dynamics_step(g, lambda, y, eta, c);
        }
    }

    #[test]
    fn u_and_w_stay_consistent(g in -3.0..3.0f64, y in -2.0..2.0f64, lambda in 0.0..2.0f64, eta in 0.1..2.0f64, c in 1e-4..1e-1f64) {
        let s = ScalarDynamicsState::from_output(g, lambda, y, eta, c);
        prop_assert!(s.u >= 0.0 && s.v >= 0.0);
        let rhs = c * eta * eta * y * y * s.u;
        prop_assert!((s.w * s.w - rhs).abs() <= 1e-12 * (1.0 + rhs));
    }

    #[test]
    fn gqm_step_fixed_point_and_linear_limit(lambda in 0.1..3.0f64, eta in 0.1..2.0f64, g in -2.0..2.0f64, x2 in 0.1..5.0f64) {
        prop_assert_eq!(gqm_dynamics_step(0.0, lambda, eta, 0.1, x2), (0.0, lambda));
        let (g2, l2) = gqm_dynamics_step(g, lambda, eta, 0.0, x2);
        prop_assert!((g2 - (1.0 - eta * lambda) * g).abs() <= 1e-12 * (1.0 + g.abs()));
        prop_assert_eq!(l2, lambda);
    }

    #[test]
    fn projected_losses_add_up(values in proptest::collection::vec(-3.0..3.0f64, 2..12)) {
        let n = values.len();
        let g = DVector::from_vec(values);
        let y = DVector::zeros(n);
        let total: f64 = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                projected_loss(&g, &y, &e).unwrap()
            })
            .sum();
        prop_assert!((total - 0.5 * g.norm_squared()).abs() <= 1e-12 * (1.0 + total));
    }

    #[test]
    fn one_dimensional_kernels_have_rank_two(half in 1usize..16, seed in 0u64..1000) {
        let n = 2 * half;
        let data = gen_gaussian_1d(n, seed).unwrap();
        let model = AnchoredModel::initialize(Family::Nqm, 64, 1, seed).unwrap();
        let snap = tangent_kernel(&model, &data).unwrap();
        prop_assert!(snap.eigenvalues.get(2).is_none_or(|l| l.abs() < 1e-8 * snap.lambda_max()));
        let (p1, p2) = rank2_eigenstructure(&data).unwrap();
        prop_assert!(p1.dot(&p2) == 0.0);
    }

    #[test]
    fn thresholds_are_ordered(values in proptest::collection::vec(0.01..10.0f64, 1..8)) {
        let t = RateThresholds::from_eigenvalues(&values).unwrap();
        prop_assert!(t.eta_critical < t.eta_max_estimate);
        let top = values.iter().copied().fold(0.0, f64::max);
        prop_assert!((t.eta_critical - 2.0 / top).abs() <= 1e-12 * t.eta_critical);
        prop_assert!(t.per_direction.windows(2).all(|w| w[0].eigenvalue >= w[1].eigenvalue));
    }

    #[test]
    fn checkpoints_round_trip(m in 1usize..20, d in 1usize..5, seed in 0u64..1000, family in 0usize..3) {
        let family = [Family::Network, Family::Nqm, Family::Linearized][family];
        let model = AnchoredModel::initialize(family, m, d, seed).unwrap();
        let ckpt = Checkpoint::from_model(&model);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().into_model().unwrap();
        let json = Checkpoint::from_json(&ckpt.to_json()).unwrap().into_model().unwrap();
        let x = DVector::from_element(d, 0.7);
        let f = model_forward(&model, &x).unwrap();
        prop_assert_eq!(model_forward(&back, &x).unwrap(), f);
        prop_assert_eq!(model_forward(&json, &x).unwrap(), f);
    }

    #[test]
    fn config_overrides_round_trip(width in 1usize..10000, half in 1usize..250, steps in 1usize..5000) {
        let n = 2 * half;
        let base = ExperimentConfig::synthetic_default();
        let set = [format!("model.width={width}"), format!("dataset.n={n}"), format!("max_steps={steps}")];
        let tuned = base.apply_overrides(&set).unwrap();
        prop_assert_eq!(&tuned.width_grid, &vec![width]);
        prop_assert_eq!(tuned.max_steps, steps);
        let again = ExperimentConfig::from_json(&tuned.to_json()).unwrap();
        prop_assert_eq!(again.hash(), tuned.hash());
    }
}

#[test]
fn identity_kernel_thresholds() {
    let snap = nqm::kernel::TangentKernelSnapshot::from_matrix(DMatrix::identity(5, 5), 0).unwrap();
    let t = critical_lr(&snap).unwrap();
    assert_eq!((t.eta_critical, t.eta_max_estimate), (2.0, 4.0));
}

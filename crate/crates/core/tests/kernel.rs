// Kernel spectra, thresholds and the rank-2 structure of 1-D data.

use nalgebra::{DMatrix, DVector};
use nqm::dynamics::gd_step;
use nqm::experiments::{find_two_threshold_dataset, gen_gaussian_1d, gen_single_example};
use nqm::kernel::{critical_lr, kernel_scale_bounds, rank2_eigenstructure, tangent_kernel};
use nqm::linalg::{asymmetry, normalized, symmetric_eigen};
use nqm::models::{
    linearized_forward, model_forward, model_gradient, network_forward, nqm_forward, AnchoredModel, Dataset, Family,
    NetworkParams,
};
use nqm::rng::{stream, streams};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn kernels_are_symmetric_psd_with_accurate_eigenpairs() {
    for (k, family) in [Family::Network, Family::Nqm, Family::Linearized].into_iter().enumerate() {
        let data = gen_gaussian_1d(16, k as u64).unwrap();
        let mut model = AnchoredModel::initialize(family, 300, 1, k as u64).unwrap();
        let eta = 2.5 / tangent_kernel(&model, &data).unwrap().lambda_max();
        for _ in 0..20 {
            let snap = tangent_kernel(&model, &data).unwrap();
            let top = snap.lambda_max();
            assert!(asymmetry(&snap.k) < 1e-10 * top);
            assert!(snap.eigenvalues.iter().all(|&l| l >= -1e-8 * top));
            assert!(snap.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            for i in 0..snap.eigenvalues.len() {
                let v = snap.eigenvector(i);
                let residual = (&snap.k * &v - &v * snap.eigenvalues[i]).norm();
                assert!(residual < 1e-8 * top, "{family:?} eigenpair {i}: {residual:e}");
            }
            if family == Family::Linearized {
                break;
            }
            gd_step(&mut model, &data, eta).unwrap();
        }
    }
}

#[test]
fn linearized_kernel_never_moves() {
    let data = gen_gaussian_1d(16, 3).unwrap();
    let mut model = AnchoredModel::initialize(Family::Linearized, 200, 1, 3).unwrap();
    let k0 = tangent_kernel(&model, &data).unwrap().k;
    let eta = 1.0 / tangent_kernel(&model, &data).unwrap().lambda_max();
    let mut drift = 0.0f64;
    for _ in 0..500 {
        gd_step(&mut model, &data, eta).unwrap();
        drift = drift.max((tangent_kernel(&model, &data).unwrap().k - &k0).abs().max());
    }
    assert!(drift < 1e-10, "{drift:e}");
}

#[test]
fn kernel_is_gram_of_finite_difference_gradients() {
    let model = AnchoredModel::initialize(Family::Nqm, 4, 2, 8).unwrap();
    let data = Dataset::new(DMatrix::from_row_slice(3, 2, &[0.3, -1.1, 1.4, 0.2, -0.7, 0.9]), DVector::zeros(3)).unwrap();
    let base = model.current().flatten();
    let h = 1e-6;
    let grads: Vec<DVector<f64>> = (0..3)
        .map(|i| {
            let x = data.input(i);
            DVector::from_fn(base.len(), |k, _| {
                let shifted = |s: f64| {
                    let mut w = base.clone();
                    w[k] += s;
                    let params = NetworkParams::from_flat(4, 2, &w).unwrap();
                    model_forward(&model.clone().with_current(params).unwrap(), &x).unwrap()
                };
                (shifted(h) - shifted(-h)) / (2.0 * h)
            })
        })
        .collect();
    let gram = DMatrix::from_fn(3, 3, |i, j| grads[i].dot(&grads[j]));
    let k = tangent_kernel(&model, &data).unwrap().k;
    assert!((&k - &gram).norm() / k.norm() < 1e-6);
}

#[test]
fn rank_two_identity_holds_along_training() {
    let data = gen_gaussian_1d(24, 9).unwrap();
    let mut model = AnchoredModel::initialize(Family::Nqm, 500, 1, 9).unwrap();
    let (p1, p2) = rank2_eigenstructure(&data).unwrap();
    let (p1, p2) = (normalized(&p1).unwrap(), normalized(&p2).unwrap());
    let eta = 3.0 / tangent_kernel(&model, &data).unwrap().lambda_max();
    for _ in 0..100 {
        let k = tangent_kernel(&model, &data).unwrap().k;
        let l1 = p1.dot(&(&k * &p1));
        let l2 = p2.dot(&(&k * &p2));
        let rebuilt = &p1 * p1.transpose() * l1 + &p2 * p2.transpose() * l2;
        assert!((&k - &rebuilt).norm() < 1e-8 * k.norm());
        gd_step(&mut model, &data, eta).unwrap();
    }
}

#[test]
fn critical_rate_matches_linearized_loss_hessian() {
    for seed in 0..5 {
        let n = 3 + seed as usize;
        let mut rng = stream(seed, streams::DATA);
        let inputs = DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal));
        let data = Dataset::new(inputs, DVector::zeros(n)).unwrap();
        let model = AnchoredModel::initialize(Family::Linearized, 5, 2, seed).unwrap();
        let jac = DMatrix::from_fn(n, model.num_params(), |i, k| model_gradient(&model, &data.input(i)).unwrap()[k]);
        let hessian = jac.transpose() * &jac;
        let top = symmetric_eigen(&hessian).values[0];
        let eta_c = critical_lr(&tangent_kernel(&model, &data).unwrap()).unwrap().eta_critical;
        assert!((eta_c - 2.0 / top).abs() < 1e-10 * eta_c);
    }
}

#[test]
fn thresholds_are_ordered_on_mixture_data() {
    let bands = find_two_threshold_dataset(128, 5000, 0, 100).unwrap();
    let (e1, e2, emax) = (2.0 / bands.lambda1, 2.0 / bands.lambda2, 4.0 / bands.lambda1);
    assert!(e1 < e2 && e2 < emax, "{e1} {e2} {emax}");
}

#[test]
fn initial_eigenvalue_inside_scale_band_for_most_seeds() {
    let data = gen_single_example(5, 1.0, 0).unwrap();
    let (lo, hi) = kernel_scale_bounds(&data).unwrap();
    let inside = (0..200)
        .filter(|&seed| {
            let model = AnchoredModel::initialize(Family::Nqm, 5000, 5, seed).unwrap();
            let l = tangent_kernel(&model, &data).unwrap().lambda_max();
            (lo..=hi).contains(&l)
        })
        .count();
    assert!(inside >= 190, "{inside}/200 inside [{lo}, {hi}]");
}

#[test]
fn constant_data_band_matches_direct_kernel() {
    let c = 0.8;
    let n = 6;
    let data = Dataset::scalar(&vec![c; n], &vec![0.0; n]).unwrap();
    let (lo, hi) = kernel_scale_bounds(&data).unwrap();
    let m_value = c * c * n as f64;
    assert!((lo - 0.5 * m_value).abs() < 1e-12 && (hi - 1.5 * m_value).abs() < 1e-12);
    let model = AnchoredModel::initialize(Family::Nqm, 4000, 1, 1).unwrap();
    let l = tangent_kernel(&model, &data).unwrap().lambda_max();
    let single = tangent_kernel(&model, &Dataset::scalar(&[c], &[0.0]).unwrap()).unwrap().lambda_max();
    assert!((l - n as f64 * single).abs() < 1e-9 * l);
    assert!((lo..=hi).contains(&l));
}

/// Random unit direction inside the top eigenspace of the output Hessian at
/// `x`: each active neuron `i` moves along `(uᵢ ∝ x̂, vᵢ)` with one shared
/// random weight. These directions realize the largest deviation from the
/// linear model over a ball around the anchor.
fn top_curvature_direction(anchor: &NetworkParams, x: &DVector<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let (m, d) = (anchor.width(), anchor.input_dim());
    let xhat = x.normalize();
    let mut dir = DVector::zeros(m * (d + 1));
    for i in 0..m {
        if anchor.first_layer.row(i).transpose().dot(x) >= 0.0 {
            let c: f64 = rng.sample(StandardNormal);
            for k in 0..d {
                dir[i * d + k] = c * xhat[k];
            }
            dir[m * d + i] = c;
        }
    }
    dir.normalize()
}

fn max_gaps(m: usize, seed: u64) -> (f64, f64) {
    let d = 5;
    let x = gen_single_example(d, 1.0, 77).unwrap().input(0);
    let model = AnchoredModel::initialize(Family::Network, m, d, seed).unwrap();
    let base = model.anchor().flatten();
    let mut rng = stream(seed, streams::PROBE);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let dir = top_curvature_direction(model.anchor(), &x, &mut rng);
        let params = NetworkParams::from_flat(m, d, &(&base + dir)).unwrap();
        let at = model.clone().with_current(params).unwrap();
        let lin = linearized_forward(&at, &x).unwrap();
        worst.0 = worst.0.max((network_forward(&at, &x).unwrap() - lin).abs());
        worst.1 = worst.1.max((nqm_forward(&at, &x).unwrap() - lin).abs());
    }
    worst
}

#[test]
fn distance_from_linear_model_shrinks_with_width() {
    for seed in 0..3 {
        let narrow = max_gaps(500, seed);
        let wide = max_gaps(2000, seed);
        let factors = (narrow.0 / wide.0, narrow.1 / wide.1);
        assert!((1.5..=3.0).contains(&factors.0), "network factor {}", factors.0);
        assert!((1.5..=3.0).contains(&factors.1), "quadratic factor {}", factors.1);
    }
}

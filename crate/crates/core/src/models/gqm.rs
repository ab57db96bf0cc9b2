use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Linear feature map `φ`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `φ ≡ 0`.
    Zero,
    /// `φ(x) = x/‖x‖`; requires `dim x = p`.
    Normalized,
}

/// Curvature `Σ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    /// Input-independent diagonal matrix.
    Diagonal(DVector<f64>),
    /// Input-independent dense symmetric matrix.
    Dense(DMatrix<f64>),
    /// `[[0, I_m ⊗ x], [I_m ⊗ xᵀ, 0]]` acting on `w = [vec(U); v]` with
    /// `vec` taken row by row; `x` has dimension `d`.
    LinearNet { m: usize, d: usize },
}

/// `g(w; x) = wᵀφ(x) + ½γ·wᵀΣ(x)w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralQuadraticModel {
    pub weights: DVector<f64>,
    pub features: FeatureMap,
    pub curvature: Curvature,
    pub gamma: f64,
    initial: DVector<f64>,
}

impl GeneralQuadraticModel {
    pub fn new(weights: DVector<f64>, features: FeatureMap, curvature: Curvature, gamma: f64) -> Result<Self> {
        let p = weights.len();
        if p == 0 {
            return Err(Error::Argument("quadratic model needs p ≥ 1".into()));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Argument(format!("γ must be finite and nonnegative, got {gamma}")));
        }
        match &curvature {
            Curvature::Diagonal(diag) => check_dim("curvature diagonal", p, diag.len())?,
            Curvature::Dense(sigma) => {
                check_dim("curvature rows", p, sigma.nrows())?;
                check_dim("curvature cols", p, sigma.ncols())?;
                if crate::linalg::asymmetry(sigma) > 1e-12 * sigma.abs().max().max(1.0) {
                    return Err(Error::Argument("curvature matrix must be symmetric".into()));
                }
            }
            Curvature::LinearNet { m, d } => check_dim("linear-net parameters", m * (d + 1), p)?,
        }
        Ok(Self {
            initial: weights.clone(),
            weights,
            features,
            curvature,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn initial_weights(&self) -> &DVector<f64> {
        &self.initial
    }

    /// Same structure with a different `γ`, restarted at the initial weights.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.initial.clone(), self.features.clone(), self.curvature.clone(), gamma)
    }

    pub fn with_weights(&self, weights: DVector<f64>) -> Result<Self> {
        check_dim("weights", self.dim(), weights.len())?;
        Self::new(weights, self.features.clone(), self.curvature.clone(), self.gamma)
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        match (&self.features, &self.curvature) {
            (_, Curvature::LinearNet { d, .. }) => check_dim("input dimension", *d, x.len()),
            (FeatureMap::Normalized, _) => check_dim("input dimension", self.dim(), x.len()),
            _ => Ok(()),
        }
    }

    pub fn feature(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        Ok(match self.features {
            FeatureMap::Zero => DVector::zeros(self.dim()),
            FeatureMap::Normalized => {
                crate::linalg::normalized(x).ok_or_else(|| Error::Argument("φ(x) = x/‖x‖ undefined at x = 0".into()))?
            }
        })
    }

    /// `Σ(x)·z`.
    pub fn curvature_apply(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        check_dim("curvature operand", self.dim(), z.len())?;
        Ok(match &self.curvature {
            Curvature::Diagonal(diag) => diag.component_mul(z),
            Curvature::Dense(sigma) => sigma * z,
            Curvature::LinearNet { m, d } => {
                let (m, d) = (*m, *d);
                let mut out = DVector::zeros(m * (d + 1));
                for i in 0..m {
                    let vi = z[m * d + i];
                    let mut ux = 0.0;
                    for k in 0..d {
                        out[i * d + k] = vi * x[k];
                        ux += z[i * d + k] * x[k];
                    }
                    out[m * d + i] = ux;
                }
                out
            }
        })
    }

    /// Dense `Σ(x)`.
    pub fn curvature_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let mut out = DMatrix::zeros(p, p);
        let mut e = DVector::zeros(p);
        for c in 0..p {
            e[c] = 1.0;
            out.set_column(c, &self.curvature_apply(x, &e)?);
            e[c] = 0.0;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<f64> {
        let phi = self.feature(x)?;
        let sw = self.curvature_apply(x, &self.weights)?;
        Ok(self.weights.dot(&phi) + 0.5 * self.gamma * self.weights.dot(&sw))
    }

    /// `∇g = φ(x) + γΣ(x)w`.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let phi = self.feature(x)?;
        let sw = self.curvature_apply(x, &self.weights)?;
        Ok(phi + sw * self.gamma)
    }
}

/// `wᵀφ(x) + ½γ·wᵀΣ(x)w`.
pub fn gqm_forward(model: &GeneralQuadraticModel, x: &DVector<f64>) -> Result<f64> {
    model.forward(x)
}

/// Two-layer linear network `(1/√m)·vᵀUx` written as a quadratic model with
/// `φ ≡ 0`, `γ = 1/√m` and `w = [vec(U); v]`. The input `x` fixes `d`.
pub fn build_linear_net_as_gqm(
    u: &DMatrix<f64>,
    v: &DVector<f64>,
    x: &DVector<f64>,
) -> Result<GeneralQuadraticModel> {
    let (m, d) = u.shape();
    check_dim("second layer", m, v.len())?;
    check_dim("input dimension", d, x.len())?;
    let mut w = DVector::zeros(m * (d + 1));
    for i in 0..m {
        for k in 0..d {
            w[i * d + k] = u[(i, k)];
        }
        w[m * d + i] = v[i];
    }
    GeneralQuadraticModel::new(w, FeatureMap::Zero, Curvature::LinearNet { m, d }, 1.0 / (m as f64).sqrt())
}

pub const DEFAULT_GQM_GAMMA: f64 = 1e-3;

/// Random instance: `φ(x) = x/‖x‖`, diagonal `Σ` with independent ±1
/// entries, `w ~ N(0, I_p)`. Returns the model and the input `x ~ N(0, I_p)`.
pub fn build_random_gqm(p: usize, seed: u64) -> Result<(GeneralQuadraticModel, DVector<f64>)> {
    if p == 0 {
        return Err(Error::Argument("build_random_gqm needs p ≥ 1".into()));
    }
    let mut r = rng::stream(seed, rng::streams::GQM);
    let x = DVector::from_fn(p, |_, _| r.sample(StandardNormal));
    let diag = DVector::from_fn(p, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
    let w = DVector::from_fn(p, |_, _| r.sample(StandardNormal));
    let model = GeneralQuadraticModel::new(w, FeatureMap::Normalized, Curvature::Diagonal(diag), DEFAULT_GQM_GAMMA)?;
    Ok((model, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dim_identity_example() {
        let model = GeneralQuadraticModel::new(
            DVector::from_vec(vec![1.0, 1.0]),
            FeatureMap::Normalized,
            Curvature::Dense(DMatrix::identity(2, 2)),
            1.0,
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(gqm_forward(&model, &x).unwrap(), 2.0);
    }

    #[test]
    fn zero_gamma_and_zero_weights() {
        let (model, x) = build_random_gqm(10, 3).unwrap();
        let linear = model.with_gamma(0.0).unwrap();
        let phi = model.feature(&x).unwrap();
        assert!((gqm_forward(&linear, &x).unwrap() - model.weights.dot(&phi)).abs() < 1e-15);
        let zero = model.with_weights(DVector::zeros(10)).unwrap();
        assert_eq!(gqm_forward(&zero, &x).unwrap(), 0.0);
    }

    #[test]
    fn linear_net_unit_example() {
        let u = DMatrix::from_element(1, 1, 2.0);
        let v = DVector::from_element(1, 3.0);
        let x = DVector::from_element(1, 1.0);
        let model = build_linear_net_as_gqm(&u, &v, &x).unwrap();
        assert_eq!(model.gamma, 1.0);
        assert_eq!(model.weights.as_slice(), &[2.0, 3.0]);
        assert_eq!(
            model.curvature_matrix(&x).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert_eq!(gqm_forward(&model, &x).unwrap(), 6.0);
        assert_eq!(gqm_forward(&model, &DVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn linear_net_curvature_is_symmetric() {
        let u = DMatrix::from_fn(2, 3, |i, k| (i as f64) - (k as f64) * 0.5);
        let v = DVector::from_vec(vec![0.3, -1.2]);
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let sigma = build_linear_net_as_gqm(&u, &v, &x).unwrap().curvature_matrix(&x).unwrap();
        assert_eq!(sigma.clone(), sigma.transpose());
    }

    #[test]
    fn random_instance_contract() {
        let (a, xa) = build_random_gqm(100, 9).unwrap();
        let (b, xb) = build_random_gqm(100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(xa, xb);
        let Curvature::Diagonal(diag) = &a.curvature else { panic!("diagonal expected") };
        assert!(diag.iter().all(|&s| s == 1.0 || s == -1.0));
        assert!((a.feature(&xa).unwrap().norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.gamma, 1e-3);
    }
}

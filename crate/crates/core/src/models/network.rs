use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Parameters of the two-layer network `f(u, v; x) = (1/√(md)) Σ vᵢ relu(uᵢᵀx)`.
///
/// The flat parameter layout used everywhere in the crate is the first layer
/// in row-major order (`u₁, u₂, …`) followed by the second layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub first_layer: DMatrix<f64>,
    pub second_layer: DVector<f64>,
}

impl NetworkParams {
    pub fn new(first_layer: DMatrix<f64>, second_layer: DVector<f64>) -> Result<Self> {
        if first_layer.nrows() == 0 || first_layer.ncols() == 0 {
            return Err(Error::Argument("network needs m ≥ 1 and d ≥ 1".into()));
        }
        check_dim("second layer", first_layer.nrows(), second_layer.len())?;
        if let Some(index) = first_layer.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "first layer",
                index,
            });
        }
        if let Some(index) = second_layer.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "second layer",
                index,
            });
        }
        Ok(Self {
            first_layer,
            second_layer,
        })
    }

    pub fn width(&self) -> usize {
        self.first_layer.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.first_layer.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.width() * (self.input_dim() + 1)
    }

    /// `1/√(md)`.
    pub fn scale(&self) -> f64 {
        1.0 / ((self.width() * self.input_dim()) as f64).sqrt()
    }

    pub fn flatten(&self) -> DVector<f64> {
        let (m, d) = (self.width(), self.input_dim());
        let mut out = DVector::zeros(m * (d + 1));
        for i in 0..m {
            for k in 0..d {
                out[i * d + k] = self.first_layer[(i, k)];
            }
            out[m * d + i] = self.second_layer[i];
        }
        out
    }

    pub fn from_flat(m: usize, d: usize, flat: &DVector<f64>) -> Result<Self> {
        check_dim("flat parameters", m * (d + 1), flat.len())?;
        let first = DMatrix::from_fn(m, d, |i, k| flat[i * d + k]);
        let second = DVector::from_fn(m, |i, _| flat[m * d + i]);
        Self::new(first, second)
    }

    /// In-place `w ← w − η·dir` for a flat direction.
    pub(crate) fn axpy_flat(&mut self, eta: f64, dir: &DVector<f64>) {
        let (m, d) = (self.width(), self.input_dim());
        for i in 0..m {
            for k in 0..d {
                self.first_layer[(i, k)] -= eta * dir[i * d + k];
            }
            self.second_layer[i] -= eta * dir[m * d + i];
        }
    }

    pub fn distance(&self, other: &NetworkParams) -> f64 {
        let du = (&self.first_layer - &other.first_layer).norm_squared();
        let dv = (&self.second_layer - &other.second_layer).norm_squared();
        (du + dv).sqrt()
    }
}

/// NTK initialization: `uᵢ ~ N(0, I_d)`, `vᵢ` uniform on `{−1, +1}`.
pub fn ntk_initialize(m: usize, d: usize, seed: u64) -> Result<NetworkParams> {
    if m == 0 || d == 0 {
        return Err(Error::Argument(format!("ntk_initialize needs m, d ≥ 1, got m={m}, d={d}")));
    }
    let mut rng = rng::stream(seed, rng::streams::INIT);
    // row-major draw order so that a given (seed, m, d) is layout independent
    let mut first = DMatrix::zeros(m, d);
    for i in 0..m {
        for k in 0..d {
            first[(i, k)] = rng.sample(StandardNormal);
        }
    }
    let second = DVector::from_fn(m, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    NetworkParams::new(first, second)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Network,
    Linearized,
    Nqm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Network => "network",
            Family::Linearized => "linearized",
            Family::Nqm => "nqm",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "network" => Ok(Family::Network),
            "linearized" | "linear" => Ok(Family::Linearized),
            "nqm" | "quadratic" => Ok(Family::Nqm),
            other => Err(Error::Argument(format!("unknown model family `{other}`"))),
        }
    }
}

/// Anchor pre-activations `Z₀ = U₀Xᵀ` for one batch of inputs.
#[derive(Debug, Clone)]
struct AnchorCache {
    inputs: DMatrix<f64>,
    z0: Arc<Pooled>,
}

/// Trainable parameters together with the frozen anchor `w₀`.
///
/// The linearized and quadratic families evaluate their activation masks at
/// the anchor. Anchor pre-activations for the training inputs are cached at
/// construction; any other batch recomputes them.
#[derive(Debug, Clone)]
pub struct AnchoredModel {
    family: Family,
    current: NetworkParams,
    anchor: NetworkParams,
    seed: Option<u64>,
    cache: Option<AnchorCache>,
}

impl AnchoredModel {
    pub fn new(family: Family, anchor: NetworkParams) -> Self {
        Self {
            family,
            current: anchor.clone(),
            anchor,
            seed: None,
            cache: None,
        }
    }

    /// NTK-initialized model; the anchor and the starting point coincide.
    pub fn initialize(family: Family, m: usize, d: usize, seed: u64) -> Result<Self> {
        let mut model = Self::new(family, ntk_initialize(m, d, seed)?);
        model.seed = Some(seed);
        Ok(model)
    }

    pub fn with_current(mut self, current: NetworkParams) -> Result<Self> {
        check_dim("current width", self.anchor.width(), current.width())?;
        check_dim("current input dim", self.anchor.input_dim(), current.input_dim())?;
        self.current = current;
        Ok(self)
    }

    /// Cache anchor activations for `inputs` (n × d).
    pub fn with_cache(mut self, inputs: &DMatrix<f64>) -> Result<Self> {
        check_dim("cached inputs", self.input_dim(), inputs.ncols())?;
        let z0 = Arc::new(pooled_product(&self.anchor.first_layer, inputs));
        self.cache = Some(AnchorCache {
            inputs: inputs.clone(),
            z0,
        });
        Ok(self)
    }

    /// Builds the cache for `inputs` unless it is already there.
    pub(crate) fn ensure_cache(&mut self, inputs: &DMatrix<f64>) -> Result<()> {
        let cached = self.cache.as_ref().is_some_and(|c| c.inputs == *inputs);
        if !cached && self.family != Family::Network {
            *self = self.clone().with_cache(inputs)?;
        }
        Ok(())
    }

    pub(crate) fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Same parameters, different family tag. The cache is kept.
    pub fn as_family(&self, family: Family) -> Self {
        let mut out = self.clone();
        out.family = family;
        out
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn current(&self) -> &NetworkParams {
        &self.current
    }

    pub fn anchor(&self) -> &NetworkParams {
        &self.anchor
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.anchor.width()
    }

    pub fn input_dim(&self) -> usize {
        self.anchor.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.anchor.num_params()
    }

    pub fn scale(&self) -> f64 {
        self.anchor.scale()
    }

    /// Whether the cached anchor masks still match a fresh recomputation.
    pub fn cache_is_consistent(&self) -> bool {
        match &self.cache {
            None => true,
            Some(c) => {
                let fresh = &self.anchor.first_layer * c.inputs.transpose();
                fresh
                    .iter()
                    .zip(c.z0.iter())
                    .all(|(a, b)| (*a >= 0.0) == (*b >= 0.0))
            }
        }
    }

    pub(crate) fn current_mut(&mut self) -> &mut NetworkParams {
        &mut self.current
    }

    fn anchor_preactivations(&self, inputs: &DMatrix<f64>) -> Arc<Pooled> {
        if let Some(c) = &self.cache {
            if c.inputs.shape() == inputs.shape() && c.inputs == *inputs {
                return Arc::clone(&c.z0);
            }
        }
        Arc::new(pooled_product(&self.anchor.first_layer, inputs))
    }

    /// Outputs and gradient factors of `family` on a batch (rows of `inputs`).
    pub fn evaluate_as(&self, family: Family, inputs: &DMatrix<f64>) -> Result<AnchoredEval> {
        check_dim("input dimension", self.input_dim(), inputs.ncols())?;
        let (m, n) = (self.width(), inputs.nrows());
        let s = self.scale();
        let v = self.current.second_layer.as_slice();
        let v0 = self.anchor.second_layer.as_slice();
        // a starts as the current pre-activations and is overwritten in place
        let mut a = pooled_product(&self.current.first_layer, inputs);
        let mut b = DMatrix::from_vec(m, n, take_buffer(m * n));
        let mut outputs = DVector::zeros(n);
        let z0 = match family {
            Family::Network => None,
            _ => Some(self.anchor_preactivations(inputs)),
        };
        for j in 0..n {
            let aj = a.0.column_mut(j);
            let aj = aj.data.into_slice_mut();
            let bj = b.column_mut(j);
            let bj = bj.data.into_slice_mut();
            let mut acc = 0.0;
            match (family, &z0) {
                (Family::Network, _) | (_, None) => {
                    for i in 0..m {
                        let z = aj[i];
                        let on = f64::from(u8::from(z >= 0.0));
                        aj[i] = on * v[i];
                        bj[i] = on * z;
                        acc += on * v[i] * z;
                    }
                }
                (Family::Nqm, Some(z0)) => {
                    let z0j = &z0.as_slice()[j * m..(j + 1) * m];
                    for i in 0..m {
                        let z = aj[i];
                        let on = f64::from(u8::from(z0j[i] >= 0.0));
                        aj[i] = on * v[i];
                        bj[i] = on * z;
                        acc += on * v[i] * z;
                    }
                }
                (Family::Linearized, Some(z0)) => {
                    let z0j = &z0.as_slice()[j * m..(j + 1) * m];
                    for i in 0..m {
                        let z = aj[i];
                        let z0 = z0j[i];
                        let on = f64::from(u8::from(z0 >= 0.0));
                        aj[i] = on * v0[i];
                        bj[i] = on * z0;
                        acc += on * (v0[i] * z + (v[i] - v0[i]) * z0);
                    }
                }
            }
            outputs[j] = s * acc;
        }
        if let Some(index) = outputs.iter().position(|o| !o.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "model output",
                index,
            });
        }
        Ok(AnchoredEval {
            family,
            outputs,
            a,
            b: Pooled(b),
            z0,
            inputs: inputs.clone(),
            scale: s,
        })
    }

    /// Outputs only, without gradient factors. Inputs are processed in
    /// chunks so the pre-activation blocks stay small.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        const CHUNK: usize = 64;
        check_dim("input dimension", self.input_dim(), inputs.ncols())?;
        let (m, n) = (self.width(), inputs.nrows());
        let v = self.current.second_layer.as_slice();
        let v0 = self.anchor.second_layer.as_slice();
        let mut outputs = DVector::zeros(n);
        for start in (0..n).step_by(CHUNK) {
            let rows = inputs.rows(start, CHUNK.min(n - start)).into_owned();
            let z = pooled_product(&self.current.first_layer, &rows);
            let z0 = match self.family {
                Family::Network => None,
                _ => Some(pooled_product(&self.anchor.first_layer, &rows)),
            };
            for j in 0..rows.nrows() {
                let zj = &z.as_slice()[j * m..(j + 1) * m];
                let z0j = z0.as_ref().map(|z0| &z0.as_slice()[j * m..(j + 1) * m]);
                let on = |z: f64| f64::from(u8::from(z >= 0.0));
                let acc: f64 = match (self.family, z0j) {
                    (Family::Linearized, Some(z0j)) => (0..m)
                        .map(|i| on(z0j[i]) * (v0[i] * zj[i] + (v[i] - v0[i]) * z0j[i]))
                        .sum(),
                    (Family::Nqm, Some(z0j)) => (0..m).map(|i| on(z0j[i]) * v[i] * zj[i]).sum(),
                    _ => (0..m).map(|i| on(zj[i]) * v[i] * zj[i]).sum(),
                };
                outputs[start + j] = self.scale() * acc;
            }
        }
        if let Some(index) = outputs.iter().position(|o| !o.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "model output",
                index,
            });
        }
        Ok(outputs)
    }

    pub fn evaluate(&self, inputs: &DMatrix<f64>) -> Result<AnchoredEval> {
        self.evaluate_as(self.family, inputs)
    }
}

thread_local! {
    static BUFFERS: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

const POOLED_BUFFERS: usize = 6;

// Fresh m × n factor matrices cost more in page faults than in arithmetic,
// so evaluations recycle them per thread.
fn take_buffer(len: usize) -> Vec<f64> {
    let reused = BUFFERS.with(|pool| {
        let mut pool = pool.borrow_mut();
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= len)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        best.map(|i| pool.swap_remove(i))
    });
    match reused {
        Some(mut buf) => {
            buf.clear();
            buf.resize(len, 0.0);
            buf
        }
        None => vec![0.0; len],
    }
}

fn give_buffer(buf: Vec<f64>) {
    if buf.capacity() == 0 {
        return;
    }
    BUFFERS.with(|pool| {
        let mut pool = pool.borrow_mut();
        pool.push(buf);
        if pool.len() > POOLED_BUFFERS {
            let smallest = (0..pool.len()).min_by_key(|&i| pool[i].capacity()).expect("nonempty");
            pool.swap_remove(smallest);
        }
    });
}

/// Batch evaluation of an anchored model.
///
/// The per-example gradient is `s·[aᵢⱼ·xⱼ (rows i); bᵢⱼ]` where `a` and `b`
/// are the stored m × n factor matrices.
#[derive(Debug, Clone)]
pub struct AnchoredEval {
    pub family: Family,
    pub outputs: DVector<f64>,
    a: Pooled,
    b: Pooled,
    z0: Option<Arc<Pooled>>,
    inputs: DMatrix<f64>,
    scale: f64,
}

/// `U·Xᵀ` (m × n) in pooled storage.
fn pooled_product(first_layer: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Pooled {
    let mut out = DMatrix::from_vec(first_layer.nrows(), inputs.nrows(), take_buffer(first_layer.nrows() * inputs.nrows()));
    first_layer.mul_to(&inputs.transpose(), &mut out);
    Pooled(out)
}

/// An m × n matrix whose storage returns to the pool on drop.
#[derive(Debug, Clone)]
struct Pooled(DMatrix<f64>);

impl std::ops::Deref for Pooled {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Drop for Pooled {
    fn drop(&mut self) {
        let taken = std::mem::replace(&mut self.0, DMatrix::zeros(0, 0));
        give_buffer(taken.data.into());
    }
}

impl AnchoredEval {
    pub fn n(&self) -> usize {
        self.outputs.len()
    }

    /// `Jᵀc` as a flat parameter vector.
    pub fn pullback(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let (m, n) = self.a.shape();
        let d = self.inputs.ncols();
        let mut cx = self.inputs.clone();
        for j in 0..n {
            cx.row_mut(j).scale_mut(coeffs[j]);
        }
        let gu = &*self.a * cx;
        let gv = &*self.b * coeffs;
        let mut out = DVector::zeros(m * (d + 1));
        for i in 0..m {
            for k in 0..d {
                out[i * d + k] = self.scale * gu[(i, k)];
            }
            out[m * d + i] = self.scale * gv[i];
        }
        out
    }

    /// Gradient of example `j` as a flat parameter vector.
    pub fn gradient(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.n());
        e[j] = 1.0;
        self.pullback(&e)
    }

    /// Full n × P Jacobian.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let (m, n) = self.a.shape();
        let d = self.inputs.ncols();
        let mut jac = DMatrix::zeros(n, m * (d + 1));
        for j in 0..n {
            for i in 0..m {
                let aij = self.scale * self.a[(i, j)];
                for k in 0..d {
                    jac[(j, i * d + k)] = aij * self.inputs[(j, k)];
                }
                jac[(j, m * d + i)] = self.scale * self.b[(i, j)];
            }
        }
        jac
    }

    /// Tangent kernel `s²[(AᵀA) ⊙ XXᵀ + BᵀB]`.
    pub fn kernel(&self) -> DMatrix<f64> {
        let s2 = self.scale * self.scale;
        let aa = self.a.tr_mul(&self.a);
        let xx = &self.inputs * self.inputs.transpose();
        let bb = self.b.tr_mul(&self.b);
        let mut k = aa.component_mul(&xx) + bb;
        k *= s2;
        // exact symmetry for the eigen solver
        let kt = k.transpose();
        (k + kt) * 0.5
    }

    /// `Gᵀp` where row `j` of G is `H(xⱼ)·Δ`, for the quadratic family.
    ///
    /// Only the mixed `u`–`v` Hessian block is nonzero, so the product costs
    /// O(md) per call.
    pub fn hessian_pullback(&self, delta: &DVector<f64>, p: &DVector<f64>) -> Option<DVector<f64>> {
        let z0 = self.z0.as_ref()?;
        if self.family != Family::Nqm {
            return None;
        }
        let (m, n) = z0.shape();
        let d = self.inputs.ncols();
        // Wᵢ = Σⱼ pⱼ M₀ᵢⱼ xⱼ
        let mut mp = DMatrix::zeros(m, n);
        for j in 0..n {
            for i in 0..m {
                if z0[(i, j)] >= 0.0 {
                    mp[(i, j)] = p[j];
                }
            }
        }
        let w = mp * &self.inputs;
        let mut out = DVector::zeros(m * (d + 1));
        for i in 0..m {
            let dv = delta[m * d + i];
            let mut dot = 0.0;
            for k in 0..d {
                out[i * d + k] = self.scale * dv * w[(i, k)];
                dot += delta[i * d + k] * w[(i, k)];
            }
            out[m * d + i] = self.scale * dot;
        }
        Some(out)
    }
}

fn single_row(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, x.len(), x.as_slice())
}

fn forward_as(state: &AnchoredModel, family: Family, x: &DVector<f64>) -> Result<f64> {
    check_dim("input dimension", state.input_dim(), x.len())
        .map_err(|e| Error::Argument(e.to_string()))?;
    Ok(state.evaluate_as(family, &single_row(x))?.outputs[0])
}

/// Two-layer ReLU network at the current parameters.
pub fn network_forward(state: &AnchoredModel, x: &DVector<f64>) -> Result<f64> {
    forward_as(state, Family::Network, x)
}

/// Second-order Taylor model of the network around the anchor.
///
/// Equals `f(w₀;x) + (w−w₀)ᵀ∇f(w₀;x) + ½(w−w₀)ᵀH(w−w₀)`, which for the
/// two-layer ReLU network collapses to the network with anchor masks.
pub fn nqm_forward(state: &AnchoredModel, x: &DVector<f64>) -> Result<f64> {
    forward_as(state, Family::Nqm, x)
}

/// First-order Taylor model of the network around the anchor.
pub fn linearized_forward(state: &AnchoredModel, x: &DVector<f64>) -> Result<f64> {
    forward_as(state, Family::Linearized, x)
}

/// Forward map of the state's own family.
pub fn model_forward(state: &AnchoredModel, x: &DVector<f64>) -> Result<f64> {
    forward_as(state, state.family(), x)
}

/// Closed-form gradient of the state's family with respect to the current parameters.
pub fn model_gradient(state: &AnchoredModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("input dimension", state.input_dim(), x.len())
        .map_err(|e| Error::Argument(e.to_string()))?;
    Ok(state.evaluate(&single_row(x))?.gradient(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vec(len: usize, seed: u64) -> DVector<f64> {
        let mut r = rng::stream(seed, 99);
        DVector::from_fn(len, |_, _| StandardNormal.sample(&mut r))
    }

    fn perturbed(model: &AnchoredModel, scale: f64, seed: u64) -> AnchoredModel {
        let mut out = model.clone();
        let dir = random_vec(model.num_params(), seed);
        out.current_mut().axpy_flat(-scale, &dir);
        out
    }

    fn at_flat(model: &AnchoredModel, flat: &DVector<f64>) -> AnchoredModel {
        let p = NetworkParams::from_flat(model.width(), model.input_dim(), flat).unwrap();
        model.clone().with_current(p).unwrap()
    }

    #[test]
    fn forward_single_unit() {
        let p = NetworkParams::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 3.0)).unwrap();
        let model = AnchoredModel::new(Family::Network, p);
        let x = DVector::from_element(1, 1.0);
        assert_eq!(network_forward(&model, &x).unwrap(), 6.0);
        assert_eq!(network_forward(&model, &DVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn zero_second_layer_gives_zero() {
        let mut p = ntk_initialize(5, 3, 1).unwrap();
        p.second_layer.fill(0.0);
        let model = AnchoredModel::new(Family::Network, p);
        assert_eq!(network_forward(&model, &random_vec(3, 2)).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        let model = AnchoredModel::initialize(Family::Nqm, 4, 3, 0).unwrap();
        let err = nqm_forward(&model, &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn families_agree_at_anchor() {
        let model = AnchoredModel::initialize(Family::Network, 6, 3, 4).unwrap();
        let x = random_vec(3, 5);
        let f = network_forward(&model, &x).unwrap();
        assert_eq!(nqm_forward(&model, &x).unwrap(), f);
        assert_eq!(linearized_forward(&model, &x).unwrap(), f);
        let g: Vec<_> = [Family::Network, Family::Nqm, Family::Linearized]
            .iter()
            .map(|&fam| model_gradient(&model.as_family(fam), &x).unwrap())
            .collect();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[0], g[2]);
    }

    #[test]
    fn linearized_gradient_is_constant() {
        let model = AnchoredModel::initialize(Family::Linearized, 4, 3, 8).unwrap();
        let x = random_vec(3, 9);
        let a = model_gradient(&perturbed(&model, 0.3, 1), &x).unwrap();
        let b = model_gradient(&perturbed(&model, 0.7, 2), &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linearized_matches_first_order_expansion() {
        let model = AnchoredModel::initialize(Family::Linearized, 3, 2, 10).unwrap();
        let x = random_vec(2, 11);
        let dir = random_vec(model.num_params(), 12);
        let w0 = model.anchor().flatten();
        let f0 = network_forward(&model, &x).unwrap();
        // O(t²) gap between the network and its linearization along a ray
        let gap = |t: f64| {
            let m = at_flat(&model, &(&w0 + &dir * t));
            (network_forward(&m, &x).unwrap() - linearized_forward(&m, &x).unwrap()).abs()
        };
        assert!(gap(1e-3) < 1e-5 * f0.abs().max(1.0));
        assert!(gap(1e-4) <= gap(1e-3) / 50.0 + 1e-15);
    }

    #[test]
    fn checkpoint_flat_roundtrip() {
        let p = ntk_initialize(4, 3, 3).unwrap();
        let back = NetworkParams::from_flat(4, 3, &p.flatten()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn initialization_contract() {
        let a = ntk_initialize(2500, 4, 17).unwrap();
        let b = ntk_initialize(2500, 4, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.second_layer.iter().all(|&v| v == 1.0 || v == -1.0));
        let md = (2500 * 4) as f64;
        assert!(a.first_layer.mean().abs() < 4.0 / md.sqrt());
    }

    #[test]
    fn cache_matches_recomputation() {
        let x = DMatrix::from_fn(5, 3, |i, k| ((i * 3 + k) as f64).sin());
        let model = AnchoredModel::initialize(Family::Nqm, 7, 3, 21).unwrap().with_cache(&x).unwrap();
        assert!(model.cache_is_consistent());
        let moved = perturbed(&model, 0.5, 3);
        let cached = moved.evaluate(&x).unwrap().outputs;
        let fresh = AnchoredModel::new(Family::Nqm, model.anchor().clone())
            .with_current(moved.current().clone())
            .unwrap()
            .evaluate(&x)
            .unwrap()
            .outputs;
        assert_eq!(cached, fresh);
    }

    #[test]
    fn pullback_matches_jacobian_transpose() {
        let x = DMatrix::from_fn(4, 3, |i, k| ((i + 2 * k) as f64).cos());
        for family in [Family::Network, Family::Nqm, Family::Linearized] {
            let model = perturbed(&AnchoredModel::initialize(family, 5, 3, 2).unwrap(), 0.2, 7);
            let eval = model.evaluate(&x).unwrap();
            let c = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
            let direct = eval.jacobian().transpose() * &c;
            assert!((eval.pullback(&c) - direct).norm() < 1e-12);
            let k = eval.kernel();
            let jj = eval.jacobian() * eval.jacobian().transpose();
            assert!((k - jj).abs().max() < 1e-12);
        }
    }
}

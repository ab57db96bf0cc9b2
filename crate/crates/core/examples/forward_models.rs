// The network, its linearization and its quadratic model evaluated at and
// away from initialization, plus a general quadratic model.

use nalgebra::DVector;
use nqm::experiments::gen_single_example;
use nqm::models::{
    build_random_gqm, gqm_forward, linearized_forward, network_forward, nqm_forward, ntk_initialize, AnchoredModel,
    Family, NetworkParams,
};

/// Returns `(|f − f_quad|, |f − f_lin|)` after a small parameter move.
pub fn run_example() -> nqm::Result<(f64, f64)> {
    let (m, d) = (4000, 5);
    let x = gen_single_example(d, 1.0, 3)?.input(0);
    let model = AnchoredModel::initialize(Family::Network, m, d, 0)?;
    let at_init = [network_forward(&model, &x)?, nqm_forward(&model, &x)?, linearized_forward(&model, &x)?];
    println!("at initialization f = f_quad = f_lin: {at_init:.6?}");

    let push = ntk_initialize(m, d, 1)?;
    let anchor = model.anchor().clone();
    let moved = NetworkParams::new(
        &anchor.first_layer + &push.first_layer * 0.05,
        &anchor.second_layer + &push.second_layer * 0.05,
    )?;
    let moved = model.with_current(moved)?;
    let f = network_forward(&moved, &x)?;
    let quad = nqm_forward(&moved, &x)?;
    let lin = linearized_forward(&moved, &x)?;
    println!("after a move of norm {:.1}: f = {f:.6}, f_quad = {quad:.6}, f_lin = {lin:.6}", moved.current().distance(&anchor));

    let (gqm, z) = build_random_gqm(100, 0)?;
    println!("random quadratic model g(w; x) = {:.6}", gqm_forward(&gqm, &z)?);
    let zero = gqm.with_weights(DVector::zeros(100))?;
    println!("with w = 0: {}", gqm_forward(&zero, &z)?);
    Ok(((f - quad).abs(), (f - lin).abs()))
}

#[allow(dead_code)]
fn main() -> nqm::Result<()> {
    run_example().map(|_| ())
}

//! Neural quadratic models and their gradient-descent dynamics.
//!
//! The crate implements a two-layer ReLU network
//! `f(u, v; x) = (1/√(md)) Σ vᵢ relu(uᵢᵀx)`, its first- and second-order
//! Taylor models around initialization, and general quadratic models
//! `g(w; x) = wᵀφ(x) + ½γ·wᵀΣ(x)w`. On top of these it provides tangent
//! kernels and critical learning rates, parameter-space gradient descent,
//! the closed-form residual/kernel recursions, a regime classifier
//! (monotonic, catapult, divergent) and the sweeps used to study them.
//!
//! Start with the runnable programs in `examples/`.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod linalg;
pub mod models;
pub mod rng;

pub use error::{Error, Result};

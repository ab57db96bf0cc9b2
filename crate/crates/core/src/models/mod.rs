//! The four model families: the two-layer ReLU network, its linearization,
//! its quadratic Taylor model, and the general quadratic model.

pub mod checkpoint;
pub mod dataset;
pub mod gqm;
pub mod network;
pub mod trainable;

pub use checkpoint::Checkpoint;
pub use dataset::Dataset;
pub use gqm::{
    build_linear_net_as_gqm, build_random_gqm, gqm_forward, Curvature, FeatureMap, GeneralQuadraticModel,
    DEFAULT_GQM_GAMMA,
};
pub use network::{
    linearized_forward, model_forward, model_gradient, network_forward, nqm_forward, ntk_initialize, AnchoredEval,
    AnchoredModel, Family, NetworkParams,
};
pub use trainable::{Evaluation, GqmEval, Trainable};

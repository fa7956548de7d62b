//! Neural-network core: parameter vectors, the MLP, and gradient oracles.

pub mod model;
pub mod params;

pub use model::{init_params, mlp_layout, Activation, Batch, ForwardCache, MlpModel};
pub use params::{variance_across, Layout, ParamVector, TensorSpec};

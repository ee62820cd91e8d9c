//! Minimal deterministic differentiable-network core.

mod checkpoint;
pub mod gradcheck;
mod loss;
mod network;
mod spec;

pub use checkpoint::{
    interpolate, l2_param_distance, load_checkpoint, perturb, read_checkpoint, save_checkpoint,
    write_checkpoint, BnInterpolation, Checkpoint, Perturbation,
};
pub use loss::{cross_entropy_per_example, probabilities, LossKind, Objective, Term};
pub use network::{ForwardOutput, ForwardTrace, Mode};
pub use spec::{Layer, ModelSpec, Network, ParamScope, ParamTensor};

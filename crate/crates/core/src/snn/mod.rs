//! Spiking neurons and the spiking MLP.

mod lif;
mod mlp;

pub use lif::{lif_step, smooth_spike, surrogate, surrogate_grad, LifParams, LifState, NeuronMode};
pub use mlp::{ModelSpec, SpikingMlp};

//! Federated learning simulator for small spiking neural networks under
//! label skew.
//!
//! * [`tensor`], [`dense`], [`params`]: minimal dense arithmetic, explicitly
//!   differentiated layers and flat parameter vectors.
//! * [`snn`]: LIF neurons with an arctan surrogate gradient and a spiking MLP
//!   trained by backpropagation through time.
//! * [`data`]: IDX loading, synthetic Gaussian blobs, quantity and Dirichlet
//!   label-skew partitioners, per-shard label statistics.
//! * [`losses`]: prior-calibrated cross-entropy, the over-confidence penalty
//!   on non-target classes, missing-label distillation, and the FedProx
//!   proximal term.
//! * [`fl`]: the federated round loop, evaluation and checkpoints.
//!
//! Everything is deterministic given the experiment seed, including under a
//! multi-threaded client pool.

pub mod data;
pub mod dense;
pub mod error;
pub mod fl;
pub mod losses;
pub mod params;
pub mod seed;
pub mod snn;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{sgd_step, ParamLayout, ParamSpec, ParamVector};
pub use tensor::Tensor;

//! Spiking multilayer perceptron trained with backpropagation through time.
//!
//! The static input is injected as current at every time step. Hidden blocks
//! are `dense -> LIF`; the readout is a non-spiking dense layer whose outputs
//! are averaged over the `T` steps to form the logits. Weights are shared
//! across time steps.
//!
//! Layers are processed one at a time over the whole time window: the dense
//! part of layer `l` runs once on the stacked `[T·B × n]` spikes of layer
//! `l-1`, then the LIF recurrence runs sequentially in time. This is
//! equivalent to the step-by-step schedule because there are no connections
//! from higher layers back into lower ones.

use std::sync::Arc;

use rand::Rng;

use super::lif::{fire, surrogate, LifParams, NeuronMode};
use crate::dense::{DenseGrads, DenseLayer};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamLayout, ParamSpec, ParamVector};
use crate::tensor::Tensor;

/// Architecture of a [`SpikingMlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub lif: LifParams,
    pub time_steps: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.time_steps == 0 {
            return Err(Error::InvalidArgument(
                "input_dim, num_classes and time_steps must be positive".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "at least one non-empty hidden layer is required".into(),
            ));
        }
        self.lif.validate()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut entries = Vec::new();
        let mut fan_in = self.input_dim;
        let dims = self.hidden.iter().copied().chain(std::iter::once(self.num_classes));
        for (layer, out) in dims.enumerate() {
            entries.push(ParamSpec {
                layer,
                name: "weight".into(),
                shape: vec![out, fan_in],
            });
            entries.push(ParamSpec {
                layer,
                name: "bias".into(),
                shape: vec![out],
            });
            fan_in = out;
        }
        ParamLayout::new(entries)
    }
}

#[derive(Debug, Clone)]
struct HiddenBlock {
    dense: DenseLayer,
    lif: LifParams,
}

/// Stored activations of one hidden block over the whole time window.
#[derive(Debug, Clone)]
struct BlockCache {
    /// Block input: `[B × d]` for the first block, `[T·B × n_prev]` after.
    input: Tensor,
    /// Integrated potentials `U`, laid out `[T·B × n]`.
    potentials: Vec<f64>,
    /// Spikes (or smooth outputs), `[T·B × n]`.
    outputs: Tensor,
}

#[derive(Debug, Clone)]
struct BpttCache {
    batch: usize,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
pub struct SpikingMlp {
    blocks: Vec<HiddenBlock>,
    readout: DenseLayer,
    time_steps: usize,
    mode: NeuronMode,
    layout: Arc<ParamLayout>,
    cache: Option<BpttCache>,
}

impl SpikingMlp {
    /// Xavier-initialized network.
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.hidden.len());
        let mut fan_in = spec.input_dim;
        for &width in &spec.hidden {
            blocks.push(HiddenBlock {
                dense: DenseLayer::xavier(fan_in, width, rng)?,
                lif: spec.lif,
            });
            fan_in = width;
        }
        let readout = DenseLayer::xavier(fan_in, spec.num_classes, rng)?;
        Ok(Self {
            blocks,
            readout,
            time_steps: spec.time_steps,
            mode: NeuronMode::Spike,
            layout: Arc::new(spec.layout()),
            cache: None,
        })
    }

    pub fn from_params(spec: &ModelSpec, params: &ParamVector) -> Result<Self> {
        spec.validate()?;
        let layout = Arc::new(spec.layout());
        if params.layout().as_ref() != layout.as_ref() {
            return Err(Error::LayoutMismatch);
        }
        let mut tensors = params.unflatten().into_iter();
        let mut next_layer = || -> Result<DenseLayer> {
            let w = tensors.next().ok_or(Error::LayoutMismatch)?;
            let b = tensors.next().ok_or(Error::LayoutMismatch)?;
            DenseLayer::new(w, b)
        };
        let mut blocks = Vec::with_capacity(spec.hidden.len());
        for _ in &spec.hidden {
            blocks.push(HiddenBlock {
                dense: next_layer()?,
                lif: spec.lif,
            });
        }
        let readout = next_layer()?;
        Ok(Self {
            blocks,
            readout,
            time_steps: spec.time_steps,
            mode: NeuronMode::Spike,
            // share the caller's Arc so layout checks stay pointer-cheap
            layout: params.layout().clone(),
            cache: None,
        })
    }

    pub fn with_mode(mut self, mode: NeuronMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> NeuronMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: NeuronMode) {
        self.mode = mode;
        self.cache = None;
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn num_classes(&self) -> usize {
        self.readout.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].dense.in_dim()
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn params(&self) -> ParamVector {
        let mut refs: Vec<&Tensor> = Vec::with_capacity(self.layout.entries().len());
        for layer in self.dense_layers() {
            refs.push(layer.weights());
            refs.push(layer.bias());
        }
        ParamVector::flatten(self.layout.clone(), &refs).expect("model layout is self-consistent")
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        if !Arc::ptr_eq(params.layout(), &self.layout) && params.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        let mut tensors = params.unflatten().into_iter();
        for block in &mut self.blocks {
            let w = tensors.next().ok_or(Error::LayoutMismatch)?;
            let b = tensors.next().ok_or(Error::LayoutMismatch)?;
            block.dense.set_parameters(w, b)?;
        }
        let w = tensors.next().ok_or(Error::LayoutMismatch)?;
        let b = tensors.next().ok_or(Error::LayoutMismatch)?;
        self.readout.set_parameters(w, b)?;
        self.cache = None;
        Ok(())
    }

    fn dense_layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.blocks.iter().map(|b| &b.dense).chain(std::iter::once(&self.readout))
    }

    /// Forward pass that keeps everything needed by [`SpikingMlp::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (logits, cache) = self.run(x, true)?;
        self.cache = cache;
        Ok(logits)
    }

    /// Forward pass without caching, for evaluation and frozen teachers.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.0)
    }

    fn run(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Option<BpttCache>)> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(shape_err(
                "snn_forward",
                format!("input {:?} vs input_dim {}", x.shape(), self.input_dim()),
            ));
        }
        let batch = x.rows();
        let steps = self.time_steps;
        let mut caches = Vec::with_capacity(if keep { self.blocks.len() } else { 0 });
        let mut layer_input = x.clone();
        for (idx, block) in self.blocks.iter().enumerate() {
            let current = block.dense.apply(&layer_input)?;
            let n = block.dense.out_dim();
            // the first block sees the same current at every step
            let shared = idx == 0;
            let (potentials, outputs) =
                integrate_window(current.data(), shared, batch * n, steps, &block.lif, self.mode);
            let outputs = Tensor::from_parts(vec![steps * batch, n], outputs);
            let next_input = outputs.clone();
            if keep {
                caches.push(BlockCache {
                    input: layer_input,
                    potentials,
                    outputs,
                });
            }
            layer_input = next_input;
        }
        let per_step = self.readout.apply(&layer_input)?;
        let classes = self.num_classes();
        let mut logits = vec![0.0; batch * classes];
        for t in 0..steps {
            let block = &per_step.data()[t * batch * classes..(t + 1) * batch * classes];
            for (l, &z) in logits.iter_mut().zip(block) {
                *l += z;
            }
        }
        let inv_t = 1.0 / steps as f64;
        for l in &mut logits {
            *l *= inv_t;
        }
        let logits = Tensor::from_parts(vec![batch, classes], logits);
        logits.ensure_finite("snn_forward")?;
        let cache = keep.then_some(BpttCache {
            batch,
            blocks: caches,
        });
        Ok((logits, cache))
    }

    /// BPTT through the cached forward pass. Consumes the cache.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<ParamVector> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        let batch = cache.batch;
        let steps = self.time_steps;
        let classes = self.num_classes();
        if grad_logits.shape() != [batch, classes] {
            return Err(shape_err(
                "snn_backward",
                format!("grad {:?} vs logits [{batch}, {classes}]", grad_logits.shape()),
            ));
        }
        // d logits / d per-step readout = 1/T at every step
        let inv_t = 1.0 / steps as f64;
        let mut per_step = Vec::with_capacity(steps * batch * classes);
        for _ in 0..steps {
            per_step.extend(grad_logits.data().iter().map(|g| g * inv_t));
        }
        let per_step = Tensor::from_parts(vec![steps * batch, classes], per_step);

        let last = cache.blocks.last().expect("at least one hidden block");
        let readout_grads = self.readout.gradients(&last.outputs, &per_step)?;
        let mut grad_outputs = readout_grads.grad_input.clone();

        let mut block_grads: Vec<DenseGrads> = Vec::with_capacity(self.blocks.len());
        for (idx, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let n = block.dense.out_dim();
            let mut grad_current =
                backprop_window(&grad_outputs, bc, batch * n, steps, &block.lif, self.mode);
            if idx == 0 {
                // shared input current: accumulate over time
                let bn = batch * n;
                let mut summed = vec![0.0; bn];
                for t in 0..steps {
                    for (s, &g) in summed.iter_mut().zip(&grad_current[t * bn..(t + 1) * bn]) {
                        *s += g;
                    }
                }
                grad_current = summed;
            }
            let rows = grad_current.len() / n;
            let grad_current = Tensor::from_parts(vec![rows, n], grad_current);
            let grads = block.dense.gradients(&bc.input, &grad_current)?;
            grad_outputs = grads.grad_input.clone();
            block_grads.push(grads);
        }
        block_grads.reverse();

        let mut refs: Vec<&Tensor> = Vec::with_capacity(self.layout.entries().len());
        for g in &block_grads {
            refs.push(&g.grad_weights);
            refs.push(&g.grad_bias);
        }
        refs.push(&readout_grads.grad_weights);
        refs.push(&readout_grads.grad_bias);
        let grads = ParamVector::flatten(self.layout.clone(), &refs)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("snn_backward"));
        }
        Ok(grads)
    }
}

/// Runs the LIF recurrence for one layer over the full window.
///
/// `current` is `[B·n]` when `shared` (same current every step) and
/// `[T·B·n]` otherwise. Returns `(potentials, outputs)`, both `[T·B·n]`.
fn integrate_window(
    current: &[f64],
    shared: bool,
    bn: usize,
    steps: usize,
    p: &LifParams,
    mode: NeuronMode,
) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![p.v_reset; bn];
    let mut potentials = vec![0.0; steps * bn];
    let mut outputs = vec![0.0; steps * bn];
    for t in 0..steps {
        let cur = if shared {
            current
        } else {
            &current[t * bn..(t + 1) * bn]
        };
        let u_t = &mut potentials[t * bn..(t + 1) * bn];
        let o_t = &mut outputs[t * bn..(t + 1) * bn];
        for j in 0..bn {
            let u = p.integrate(v[j], cur[j]);
            let s = fire(u - p.v_threshold, mode);
            u_t[j] = u;
            o_t[j] = s;
            v[j] = s * p.v_reset + (1.0 - s) * u;
        }
    }
    (potentials, outputs)
}

/// Reverse-time pass through one layer's LIF recurrence, mapping gradients
/// on the outputs to gradients on the input currents (`[T·B·n]`).
///
/// In Spike mode the reset gate is detached: `dV[t]/dU = 1 - S`. In Smooth
/// mode the exact derivative is used, including the gate's dependence on `U`.
fn backprop_window(
    grad_outputs: &Tensor,
    cache: &BlockCache,
    bn: usize,
    steps: usize,
    p: &LifParams,
    mode: NeuronMode,
) -> Vec<f64> {
    let carry = p.carry_factor();
    let inv_tau = 1.0 / p.tau;
    let go = grad_outputs.data();
    let outs = cache.outputs.data();
    let mut grad_v = vec![0.0; bn];
    let mut grad_current = vec![0.0; steps * bn];
    for t in (0..steps).rev() {
        let base = t * bn;
        for j in 0..bn {
            let u = cache.potentials[base + j];
            let o = outs[base + j];
            let sg = surrogate(u - p.v_threshold);
            let dv_du = match mode {
                NeuronMode::Spike => 1.0 - o,
                NeuronMode::Smooth => (1.0 - o) + sg * (p.v_reset - u),
            };
            let grad_u = go[base + j] * sg + grad_v[j] * dv_du;
            grad_current[base + j] = grad_u * inv_tau;
            grad_v[j] = grad_u * carry;
        }
    }
    grad_current
}

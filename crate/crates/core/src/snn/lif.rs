//! Discrete-time leaky integrate-and-fire dynamics with hard reset.
//!
//! One step, for input current `I` and previous potential `V[t-1]`:
//!
//! ```text
//! U    = V[t-1] + (I - (V[t-1] - V_r)) / tau
//! S    = H(U - V_th)                  (Spike mode)
//!      = g(U - V_th)                  (Smooth mode)
//! V[t] = S * V_r + (1 - S) * U
//! ```
//!
//! with `g(x) = atan(pi x) / pi + 1/2`, whose derivative `1 / (1 + (pi x)^2)`
//! is the surrogate used for `dH/dx` when training in Spike mode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Adds `(V[t-1] - V_r)` instead of subtracting it, which turns the leak
    /// into self-excitation. Off by default.
    #[serde(default)]
    pub inverted_leak: bool,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            inverted_leak: false,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.v_threshold > self.v_reset) || !self.v_threshold.is_finite() || !self.v_reset.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "v_threshold ({}) must exceed v_reset ({})",
                self.v_threshold, self.v_reset
            )));
        }
        Ok(())
    }

    /// Integrated (pre-spike) potential.
    #[inline]
    pub fn integrate(&self, v_prev: f64, current: f64) -> f64 {
        let drift = v_prev - self.v_reset;
        let drift = if self.inverted_leak { drift } else { -drift };
        v_prev + (current + drift) / self.tau
    }

    /// `dU/dV[t-1]`.
    #[inline]
    pub fn carry_factor(&self) -> f64 {
        if self.inverted_leak {
            1.0 + 1.0 / self.tau
        } else {
            1.0 - 1.0 / self.tau
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NeuronMode {
    /// Binary Heaviside spikes; gradients through the surrogate.
    #[default]
    Spike,
    /// Continuous `g` in place of the Heaviside; fully differentiable.
    Smooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    pub fn resting(batch: usize, neurons: usize, p: &LifParams) -> Self {
        Self {
            v: Tensor::filled(vec![batch, neurons], p.v_reset),
        }
    }
}

/// Surrogate derivative of the Heaviside step.
#[inline]
pub fn surrogate(x: f64) -> f64 {
    let px = PI * x;
    1.0 / (1.0 + px * px)
}

/// Smooth spike function; its derivative is [`surrogate`].
#[inline]
pub fn smooth_spike(x: f64) -> f64 {
    (PI * x).atan() / PI + 0.5
}

#[inline]
pub(crate) fn fire(x: f64, mode: NeuronMode) -> f64 {
    match mode {
        NeuronMode::Spike => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        NeuronMode::Smooth => smooth_spike(x),
    }
}

pub fn surrogate_grad(x: &Tensor) -> Tensor {
    x.map(surrogate)
}

/// Advances a layer of LIF neurons by one time step.
pub fn lif_step(
    state: &LifState,
    input_current: &Tensor,
    p: &LifParams,
    mode: NeuronMode,
) -> Result<(Tensor, LifState)> {
    if state.v.shape() != input_current.shape() {
        return Err(shape_err(
            "lif_step",
            format!("state {:?} vs input {:?}", state.v.shape(), input_current.shape()),
        ));
    }
    let n = state.v.len();
    let mut out = Vec::with_capacity(n);
    let mut v_next = Vec::with_capacity(n);
    for (&v, &i) in state.v.data().iter().zip(input_current.data()) {
        let u = p.integrate(v, i);
        let s = fire(u - p.v_threshold, mode);
        out.push(s);
        v_next.push(s * p.v_reset + (1.0 - s) * u);
    }
    let shape = state.v.shape().to_vec();
    let out = Tensor::from_parts(shape.clone(), out);
    let v = Tensor::from_parts(shape, v_next);
    v.ensure_finite("lif_step")?;
    Ok((out, LifState { v }))
}

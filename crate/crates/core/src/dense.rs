//! Fully connected layer with an explicit, stored-activation backward pass.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// `y = x · Wᵀ + b` with `W` stored as `[out × in]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    cached_input: Option<Tensor>,
}

/// Gradients of a scalar loss with respect to a dense layer's input and
/// parameters.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.rows()] {
            return Err(shape_err(
                "DenseLayer::new",
                format!("weights {:?}, bias {:?}", weights.shape(), bias.shape()),
            ));
        }
        Ok(Self {
            weights,
            bias,
            cached_input: None,
        })
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidArgument("layer dims must be > 0".into()));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Self::new(
            Tensor::from_parts(vec![out_dim, in_dim], w),
            Tensor::zeros(vec![out_dim]),
        )
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Replaces parameter values; shapes must not change.
    pub fn set_parameters(&mut self, weights: Tensor, bias: Tensor) -> Result<()> {
        if weights.shape() != self.weights.shape() || bias.shape() != self.bias.shape() {
            return Err(Error::LayoutMismatch);
        }
        self.weights = weights;
        self.bias = bias;
        Ok(())
    }

    /// Forward pass that caches `x` for a later [`DenseLayer::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.apply(x)?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    /// Consumes the cached input from the preceding forward pass.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<DenseGrads> {
        let x = self.cached_input.take().ok_or(Error::MissingCache)?;
        self.gradients(&x, grad_out)
    }

    /// Stateless forward pass.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.in_dim() {
            return Err(shape_err(
                "dense_forward",
                format!("input {:?} vs layer in_dim {}", x.shape(), self.in_dim()),
            ));
        }
        let mut y = x.matmul(&self.weights.transpose()?)?;
        let out = self.out_dim();
        let b = self.bias.data();
        for row in y.data_mut().chunks_exact_mut(out) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        y.ensure_finite("dense_forward")?;
        Ok(y)
    }

    /// Stateless backward pass for an explicitly supplied forward input.
    pub fn gradients(&self, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        if grad_out.shape() != [x.rows(), self.out_dim()] || x.cols() != self.in_dim() {
            return Err(shape_err(
                "dense_backward",
                format!("input {:?}, grad_out {:?}", x.shape(), grad_out.shape()),
            ));
        }
        Ok(DenseGrads {
            grad_input: grad_out.matmul(&self.weights)?,
            grad_weights: grad_out.t_matmul(x)?,
            grad_bias: grad_out.column_sum()?,
        })
    }
}

//! Flat parameter vectors exchanged between server and clients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered description of how a [`ParamVector`] maps onto model tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new(entries: Vec<ParamSpec>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[ParamSpec] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(ParamSpec::numel).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.data == other.data
    }
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if layout.total_len() != data.len() {
            return Err(Error::LayoutMismatch);
        }
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let n = layout.total_len();
        Self {
            data: vec![0.0; n],
            layout,
        }
    }

    /// Concatenates tensors in layout order.
    pub fn flatten(layout: Arc<ParamLayout>, tensors: &[&Tensor]) -> Result<Self> {
        if tensors.len() != layout.entries.len() {
            return Err(Error::LayoutMismatch);
        }
        let mut data = Vec::with_capacity(layout.total_len());
        for (spec, t) in layout.entries.iter().zip(tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::LayoutMismatch);
            }
            data.extend_from_slice(t.data());
        }
        Ok(Self { data, layout })
    }

    /// Splits back into one tensor per layout entry.
    pub fn unflatten(&self) -> Vec<Tensor> {
        let mut offset = 0;
        self.layout
            .entries
            .iter()
            .map(|spec| {
                let n = spec.numel();
                let t = Tensor::from_parts(spec.shape.clone(), self.data[offset..offset + n].to_vec());
                offset += n;
                t
            })
            .collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Plain gradient descent: `params − lr · grads`.
pub fn sgd_step(params: &ParamVector, grads: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    params.check_layout(grads)?;
    let data: Vec<f64> = params
        .data
        .iter()
        .zip(&grads.data)
        .map(|(&p, &g)| p - lr * g)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(ParamVector {
        data,
        layout: params.layout.clone(),
    })
}

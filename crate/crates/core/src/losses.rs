//! Local training objectives.
//!
//! The calibrated objective combines three terms on the logits `f`:
//!
//! * `lc`: softmax cross-entropy on prior-shifted logits `f_y + ln γ_y`;
//! * `lgc`: `Σ_c γ_c · ln mean_{i: y_i ≠ c} exp(f_ic)`, discouraging large
//!   logits for classes a sample does not belong to, weighted towards
//!   classes that dominate the local shard;
//! * `lad`: KL-style distillation from a frozen teacher, summed over the
//!   shard's missing labels only (softmax over all classes).
//!
//! `total = lc + θ·lgc + λ·lad`. Every function returns the loss together
//! with its analytic gradient with respect to the (local) logits. All
//! exponentials are taken after subtracting a row or column maximum.

use serde::{Deserialize, Serialize};

use crate::data::LabelStats;
use crate::error::{shape_err, Error, Result};
use crate::params::ParamVector;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossVariant {
    /// Calibrated objective with teacher distillation.
    FedLec,
    /// Plain cross-entropy.
    FedAvg,
    /// Plain cross-entropy plus `(μ/2)‖w − w_global‖²`.
    FedProx { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub theta: f64,
    pub lambda: f64,
    pub variant: LossVariant,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            lambda: 1.0,
            variant: LossVariant::FedLec,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.theta) || !ok(self.lambda) {
            return Err(Error::InvalidArgument(format!(
                "theta ({}) and lambda ({}) must be >= 0",
                self.theta, self.lambda
            )));
        }
        if let LossVariant::FedProx { mu } = self.variant {
            if !ok(mu) {
                return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
            }
        }
        Ok(())
    }

    pub fn needs_teacher(&self) -> bool {
        self.variant == LossVariant::FedLec
    }
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub lc: f64,
    pub lgc: f64,
    pub lad: f64,
    pub grad_logits: Tensor,
}

fn check_batch(logits: &Tensor, labels: &[usize], classes: usize) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 || logits.cols() != classes {
        return Err(shape_err(
            "loss",
            format!("logits {:?} vs {classes} classes", logits.shape()),
        ));
    }
    let b = logits.rows();
    if labels.len() != b {
        return Err(shape_err("loss", format!("{b} logit rows vs {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y >= classes) {
        return Err(Error::InvalidArgument("label out of range".into()));
    }
    Ok((b, classes))
}

/// Log-softmax of one row.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}

fn finish(loss: f64, grad: Vec<f64>, shape: &[usize], op: &'static str) -> Result<(f64, Tensor)> {
    let grad = Tensor::from_parts(shape.to_vec(), grad);
    if !loss.is_finite() {
        return Err(Error::NonFinite(op));
    }
    grad.ensure_finite(op)?;
    Ok((loss, grad))
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let classes = logits.cols();
    let (b, _) = check_batch(logits, labels, classes)?;
    shifted_cross_entropy(logits, labels, None, b, classes, "cross_entropy")
}

fn shifted_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    shift: Option<&[f64]>,
    b: usize,
    classes: usize,
    op: &'static str,
) -> Result<(f64, Tensor)> {
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * classes);
    let mut row = vec![0.0; classes];
    for (i, &y) in labels.iter().enumerate() {
        row.copy_from_slice(logits.row(i));
        if let Some(s) = shift {
            for (r, &s) in row.iter_mut().zip(s) {
                *r += s;
            }
        }
        let lp = log_softmax(&row);
        loss -= lp[y];
        for (c, &l) in lp.iter().enumerate() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.push((l.exp() - onehot) * inv_b);
        }
    }
    finish(loss * inv_b, grad, logits.shape(), op)
}

/// Cross-entropy on logits shifted by `ln γ`.
///
/// The shift is taken relative to the largest prior. Softmax ignores a
/// common offset, and a uniform prior then adds exactly zero, so it
/// reproduces [`cross_entropy`] bit for bit.
pub fn calibrated_ce(logits: &Tensor, labels: &[usize], stats: &LabelStats) -> Result<(f64, Tensor)> {
    let (b, classes) = check_batch(logits, labels, stats.num_classes())?;
    if stats.gamma.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidArgument("label priors must be strictly positive".into()));
    }
    let top = stats.gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let shift: Vec<f64> = stats.gamma.iter().map(|g| g.ln() - top).collect();
    shifted_cross_entropy(logits, labels, Some(&shift), b, classes, "calibrated_ce")
}

/// `Σ_c γ_c · ln( mean over samples with y ≠ c of exp(f_c) )`.
///
/// A class whose every batch sample carries that label contributes nothing.
pub fn gc_penalty(logits: &Tensor, labels: &[usize], stats: &LabelStats) -> Result<(f64, Tensor)> {
    let (b, classes) = check_batch(logits, labels, stats.num_classes())?;
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * classes];
    for c in 0..classes {
        let others: Vec<usize> = (0..b).filter(|&i| labels[i] != c).collect();
        if others.is_empty() {
            continue;
        }
        let m = others
            .iter()
            .map(|&i| logits.get(i, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = others.iter().map(|&i| (logits.get(i, c) - m).exp()).collect();
        let s: f64 = weights.iter().sum();
        let g = stats.gamma[c];
        loss += g * (m + s.ln() - (others.len() as f64).ln());
        for (&i, &w) in others.iter().zip(&weights) {
            grad[i * classes + c] = g * w / s;
        }
    }
    finish(loss, grad, logits.shape(), "gc_penalty")
}

/// `mean_i Σ_{c ∈ missing} p_g[c] · ln(p_g[c] / p_l[c])` with `p = softmax`
/// over all classes. The teacher logits are treated as constants.
pub fn ad_penalty(local: &Tensor, global: &Tensor, stats: &LabelStats) -> Result<(f64, Tensor)> {
    if local.shape() != global.shape() {
        return Err(shape_err(
            "ad_penalty",
            format!("local {:?} vs global {:?}", local.shape(), global.shape()),
        ));
    }
    let classes = stats.num_classes();
    if local.shape().len() != 2 || local.cols() != classes {
        return Err(shape_err("ad_penalty", format!("logits {:?}", local.shape())));
    }
    let b = local.rows();
    let mut grad = vec![0.0; b * classes];
    if stats.missing.is_empty() {
        return finish(0.0, grad, local.shape(), "ad_penalty");
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let lp_l = log_softmax(local.row(i));
        let lp_g = log_softmax(global.row(i));
        let mut teacher_mass = 0.0;
        for &c in &stats.missing {
            let pg = lp_g[c].exp();
            loss += pg * (lp_g[c] - lp_l[c]);
            teacher_mass += pg;
        }
        let row = &mut grad[i * classes..(i + 1) * classes];
        for (j, r) in row.iter_mut().enumerate() {
            *r = teacher_mass * lp_l[j].exp();
        }
        for &c in &stats.missing {
            row[c] -= lp_g[c].exp();
        }
        for r in row.iter_mut() {
            *r *= inv_b;
        }
    }
    finish(loss * inv_b, grad, local.shape(), "ad_penalty")
}

/// Local objective for the configured variant.
///
/// For the baselines `lc` is plain cross-entropy and the penalties are zero;
/// the proximal term of FedProx lives in parameter space (see
/// [`prox_term`]) and is not part of this breakdown.
pub fn fedlec_loss(
    local: &Tensor,
    global: Option<&Tensor>,
    labels: &[usize],
    stats: &LabelStats,
    cfg: &CalibrationConfig,
) -> Result<LossBreakdown> {
    match cfg.variant {
        LossVariant::FedAvg | LossVariant::FedProx { .. } => {
            let (lc, grad_logits) = cross_entropy(local, labels)?;
            Ok(LossBreakdown {
                total: lc,
                lc,
                lgc: 0.0,
                lad: 0.0,
                grad_logits,
            })
        }
        LossVariant::FedLec => {
            let global = global.ok_or(Error::MissingTeacher)?;
            let (lc, mut grad) = calibrated_ce(local, labels, stats)?;
            let (lgc, g_gc) = gc_penalty(local, labels, stats)?;
            let (lad, g_ad) = ad_penalty(local, global, stats)?;
            for ((g, &a), &b) in grad.data_mut().iter_mut().zip(g_gc.data()).zip(g_ad.data()) {
                *g += cfg.theta * a + cfg.lambda * b;
            }
            Ok(LossBreakdown {
                total: lc + cfg.theta * lgc + cfg.lambda * lad,
                lc,
                lgc,
                lad,
                grad_logits: grad,
            })
        }
    }
}

/// `(μ/2)·‖w − w_global‖²` and its gradient `μ·(w − w_global)`.
pub fn prox_term(w: &ParamVector, w_global: &ParamVector, mu: f64) -> Result<(f64, ParamVector)> {
    w.check_layout(w_global)?;
    let mut grad = ParamVector::zeros(w.layout().clone());
    let mut sq = 0.0;
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(w.data()).zip(w_global.data()) {
        let d = a - b;
        sq += d * d;
        *g = mu * d;
    }
    Ok((0.5 * mu * sq, grad))
}

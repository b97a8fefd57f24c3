//! Diagonal Gaussian heads, KL divergence and negative log-likelihood, in
//! plain-value and on-tape forms.

use std::f64::consts::PI;

use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHead {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianHead {
    /// Builds a head, clamping the log-variance into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::contract(format!(
                "head mean {:?} vs log_var {:?}",
                mean.shape(),
                log_var.shape()
            )));
        }
        let log_var = log_var.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Ok(Self { mean, log_var })
    }

    pub fn standard(shape: &[usize]) -> Self {
        Self { mean: Tensor::zeros(shape), log_var: Tensor::zeros(shape) }
    }

    /// `mean + exp(log_var / 2) · eps`.
    pub fn sample_with(&self, eps: &Tensor) -> Tensor {
        let sd = self.log_var.map(|v| (0.5 * v).exp());
        let scaled = sd.zip_map(eps, |s, e| s * e);
        self.mean.zip_map(&scaled, |m, x| m + x)
    }
}

/// `KL(q ‖ p)` summed over all dimensions.
pub fn kl_diag_gaussians(q: &GaussianHead, p: &GaussianHead) -> Result<f64> {
    if q.mean.shape() != p.mean.shape() {
        return Err(Error::contract(format!(
            "kl between heads of shape {:?} and {:?}",
            q.mean.shape(),
            p.mean.shape()
        )));
    }
    let mut kl = 0.0;
    for i in 0..q.mean.numel() {
        kl += kl_term(q.mean.data()[i], q.log_var.data()[i], p.mean.data()[i], p.log_var.data()[i]);
    }
    Ok(kl.max(0.0))
}

fn kl_term(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    let d = mq - mp;
    0.5 * (lp - lq + ((lq - lp).exp() + d * d * (-lp).exp()) - 1.0)
}

/// `−log N(x; mean, exp(log_var))` summed over all dimensions.
pub fn gaussian_nll(x: &Tensor, head: &GaussianHead) -> Result<f64> {
    if x.shape() != head.mean.shape() {
        return Err(Error::contract(format!(
            "nll of {:?} under head of shape {:?}",
            x.shape(),
            head.mean.shape()
        )));
    }
    let mut nll = 0.0;
    for i in 0..x.numel() {
        let (m, lv) = (head.mean.data()[i], head.log_var.data()[i]);
        let d = x.data()[i] - m;
        nll += 0.5 * ((2.0 * PI).ln() + lv + d * d * (-lv).exp());
    }
    Ok(nll)
}

/// Elementwise KL on the tape; log-variances are expected pre-clamped.
pub fn kl_elem(g: &mut Graph, mq: Var, lvq: Var, mp: Var, lvp: Var) -> Var {
    let dl = g.sub(lvq, lvp);
    let ratio = g.exp(dl);
    let d = g.sub(mq, mp);
    let d2 = g.square(d);
    let nlp = g.neg(lvp);
    let inv = g.exp(nlp);
    let quad = g.mul(d2, inv);
    let inner = g.add(ratio, quad);
    let neg_dl = g.neg(dl);
    let s = g.add(inner, neg_dl);
    let s = g.add_scalar(s, -1.0);
    g.scale(s, 0.5)
}

/// Elementwise Gaussian NLL on the tape.
pub fn nll_elem(g: &mut Graph, x: Var, mean: Var, log_var: Var) -> Var {
    let d = g.sub(x, mean);
    let d2 = g.square(d);
    let nlv = g.neg(log_var);
    let prec = g.exp(nlv);
    let quad = g.mul(d2, prec);
    let s = g.add(quad, log_var);
    let s = g.add_scalar(s, (2.0 * PI).ln());
    g.scale(s, 0.5)
}

/// Clamps a raw log-variance output into the supported range.
pub fn clamp_log_var(g: &mut Graph, raw: Var) -> Var {
    g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX)
}

/// Reparameterized draw `mean + exp(log_var/2) · eps` with `eps` a constant.
pub fn reparam(g: &mut Graph, mean: Var, log_var: Var, eps: Var) -> Var {
    let half = g.scale(log_var, 0.5);
    let sd = g.exp(half);
    let noise = g.mul(sd, eps);
    g.add(mean, noise)
}

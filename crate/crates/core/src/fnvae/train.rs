//! The FN-VAE training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{build_loss, Batch, ChangeMode, LossReport, LossWeights, SmoothnessVariant};
use super::model::{FnVae, MaskMode, GROUP_ALPHA, GROUP_BETA, GROUP_G, GROUP_GAMMA, GROUP_PHI};
use crate::env::{StepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per batch.
    pub batch: usize,
    /// Steps per window.
    pub window: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub smoothness: SmoothnessVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 8,
            window: 100,
            lr: 1e-3,
            weights: LossWeights::default(),
            smoothness: SmoothnessVariant::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.window < 3 {
            return Err(Error::config("fnvae batch must be ≥ 1 and window ≥ 3"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("fnvae lr must be positive"));
        }
        self.weights.validate()?;
        self.smoothness.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<LossReport>,
}

/// One parameter update on `batch`, following the group objectives:
/// φ descends the total loss; α, β and γ descend their own data terms;
/// the mask logits move only when `update_g`.
pub fn train_step(
    model: &mut FnVae,
    batch: &Batch,
    cfg: &TrainConfig,
    update_g: bool,
) -> Result<LossReport> {
    let mut lg = build_loss(model, batch, &cfg.weights, &cfg.smoothness, MaskMode::Soft, false)?;
    let report = lg.report();
    if !report.total.is_finite() {
        return Err(Error::numerical(format!("fnvae loss diverged: {report:?}")));
    }
    let v = lg.vars;
    let phi = model.ids_in_group(GROUP_PHI);
    let mut rest = model.ids_in_group(GROUP_ALPHA);
    rest.extend(model.ids_in_group(GROUP_BETA));
    rest.extend(model.ids_in_group(GROUP_GAMMA));
    if update_g {
        rest.extend(model.ids_in_group(GROUP_G));
    }
    // α, β, γ and G touch disjoint terms, so one pass over the sum of the
    // terms each group descends gives every group its own gradient.
    let mut terms = vec![v.rec_dyn, v.pred_dyn, v.rec_rw, v.pred_rw, v.kl, v.smooth];
    if update_g {
        terms.push(v.sparse);
    }
    let mut aux = terms[0];
    for &t in &terms[1..] {
        aux = lg.g.add(aux, t);
    }
    let g = &lg.g;
    let phi_vars: Vec<_> = phi.iter().map(|&id| lg.bound.var(id)).collect();
    let rest_vars: Vec<_> = rest.iter().map(|&id| lg.bound.var(id)).collect();
    let phi_grads = g.grad(v.total, &phi_vars)?;
    let rest_grads = g.grad(aux, &rest_vars)?;
    drop(lg);
    model.opt.lr = cfg.lr;
    model.opt.step(&mut model.store, &phi, &phi_grads)?;
    model.opt.step(&mut model.store, &rest, &rest_grads)?;
    Ok(report)
}

/// Start indices of every window of `len` consecutive lifetime steps.
pub fn window_starts(stream: &[StepRecord], len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut run = 0usize;
    for i in 0..stream.len() {
        run = if i > 0 && stream[i].t_tilde == stream[i - 1].t_tilde + 1 { run + 1 } else { 1 };
        if run >= len {
            out.push(i + 1 - len);
        }
    }
    out
}

/// Trains on consecutive episodes. Windows of `cfg.window` steps (shortened
/// to the longest contiguous run when the data is shorter) are drawn
/// uniformly each epoch.
pub fn train_fnvae(
    model: &mut FnVae,
    data: &[Trajectory],
    mode: &ChangeMode,
    cfg: &TrainConfig,
    update_g: bool,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let stream: Vec<StepRecord> = data.iter().flat_map(|t| t.steps.iter().cloned()).collect();
    if stream.is_empty() {
        return Err(Error::contract("fnvae training needs data"));
    }
    let mut rng = substream(seed, "fnvae-train");
    train_on_stream(model, &stream, mode, cfg, update_g, &mut rng)
}

pub fn train_on_stream(
    model: &mut FnVae,
    stream: &[StepRecord],
    mode: &ChangeMode,
    cfg: &TrainConfig,
    update_g: bool,
    rng: &mut impl Rng,
) -> Result<TrainReport> {
    let mut len = cfg.window;
    let mut starts = window_starts(stream, len);
    while starts.is_empty() && len > 3 {
        len -= 1;
        starts = window_starts(stream, len);
    }
    if starts.is_empty() {
        return Err(Error::contract("no run of 3 consecutive steps to train on"));
    }
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let windows: Vec<Vec<StepRecord>> = (0..cfg.batch)
            .map(|_| {
                let s = starts[rng.random_range(0..starts.len())];
                stream[s..s + len].to_vec()
            })
            .collect();
        let batch = Batch::new(windows, mode, (model.dims.p, model.dims.q), rng)?;
        let r = train_step(model, &batch, cfg, update_g).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        report.epochs.push(r);
    }
    Ok(report)
}

//! Change-factor inference outside training: posterior filtering over a
//! trajectory and one-step prior propagation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{FnVae, MaskMode, GROUP_G, GROUP_GAMMA, GROUP_PHI};
use crate::env::StepRecord;
use crate::error::{Error, Result};
use crate::numkit::{GaussianHead, Graph, Tensor};

/// Which change-factor block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfBlock {
    State,
    Reward,
}

/// Posterior heads and reparameterized samples at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct CfStep {
    pub theta_s: GaussianHead,
    pub theta_r: GaussianHead,
    pub sample_s: Vec<f64>,
    pub sample_r: Vec<f64>,
}

/// Runs both inference LSTMs over `steps` from a zero state. `eps` supplies
/// standard-normal draws for the samples.
pub fn infer_cf(model: &FnVae, steps: &[StepRecord], rng: &mut impl Rng) -> Result<Vec<CfStep>> {
    if steps.len() < 2 {
        return Err(Error::contract(format!("inference needs at least 2 steps, got {}", steps.len())));
    }
    let mut filter = CfFilter::new(model);
    let mut out = Vec::with_capacity(steps.len());
    for st in steps {
        let (hs, hr) = filter.observe(model, &st.s, &st.a, st.r)?;
        let mut draw = |h: &GaussianHead| {
            let eps: Vec<f64> = (0..h.mean.numel()).map(|_| rng.sample(StandardNormal)).collect();
            h.sample_with(&Tensor::vector(eps)).into_data()
        };
        let sample_s = draw(&hs);
        let sample_r = draw(&hr);
        out.push(CfStep { theta_s: hs, theta_r: hr, sample_s, sample_r });
    }
    Ok(out)
}

/// Prior head for θ at the next change given the previous value.
pub fn cf_prior(model: &FnVae, block: CfBlock, theta_prev: &[f64], mode: MaskMode) -> Result<GaussianHead> {
    let (net, n, logits) = match block {
        CfBlock::State => (&model.prior_s, model.dims.p, model.logits.ctt_s),
        CfBlock::Reward => (&model.prior_r, model.dims.q, model.logits.ctt_r),
    };
    if theta_prev.len() != n {
        return Err(Error::contract(format!("prior input has {} entries, expected {n}", theta_prev.len())));
    }
    let mut g = Graph::new();
    let p = model.store.bind_frozen_groups(&mut g, &[GROUP_GAMMA, GROUP_G]);
    let block_var = match mode {
        MaskMode::Soft => g.sigmoid(p.var(logits)),
        MaskMode::Hard => {
            let t = model.store.get(logits).map(|l| if crate::numkit::tape::sigmoid(l) > 0.5 { 1.0 } else { 0.0 });
            g.constant(t)
        }
    };
    let masks = model.prior_masks(&mut g, block_var, n);
    let x = g.constant(Tensor::matrix(1, n, theta_prev.to_vec()));
    let (mean, lv) = net.forward(&mut g, &p, x, &masks);
    GaussianHead::new(g.value(mean).reshape(&[n]), g.value(lv).reshape(&[n]))
}

/// Incremental posterior filter: feeds one observed step at a time through
/// both inference LSTMs.
#[derive(Clone, Debug)]
pub struct CfFilter {
    h_s: Tensor,
    c_s: Tensor,
    h_r: Tensor,
    c_r: Tensor,
    last: Option<(GaussianHead, GaussianHead)>,
}

impl CfFilter {
    pub fn new(model: &FnVae) -> Self {
        let hs = model.enc_s.hidden();
        let hr = model.enc_r.hidden();
        Self {
            h_s: Tensor::zeros(&[1, hs]),
            c_s: Tensor::zeros(&[1, hs]),
            h_r: Tensor::zeros(&[1, hr]),
            c_r: Tensor::zeros(&[1, hr]),
            last: None,
        }
    }

    /// Zeroes the recurrent state.
    pub fn reset(&mut self) {
        self.h_s.data_mut().fill(0.0);
        self.c_s.data_mut().fill(0.0);
        self.h_r.data_mut().fill(0.0);
        self.c_r.data_mut().fill(0.0);
    }

    /// Posterior heads after the most recent observation.
    pub fn last(&self) -> Option<&(GaussianHead, GaussianHead)> {
        self.last.as_ref()
    }

    pub fn observe(&mut self, model: &FnVae, s: &[f64], a: &[f64], r: f64) -> Result<(GaussianHead, GaussianHead)> {
        let (d, m) = (model.dims.d, model.dims.m);
        if s.len() != d || a.len() != m {
            return Err(Error::contract(format!("observation has d={}, m={}; model expects {d}, {m}", s.len(), a.len())));
        }
        let mut x = Vec::with_capacity(d + m + 1);
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x.push(r);
        let mut g = Graph::new();
        let p = model.store.bind_frozen_groups(&mut g, &[GROUP_PHI]);
        let xv = g.constant(Tensor::matrix(1, d + m + 1, x));
        let (hs, cs) = (g.constant(self.h_s.clone()), g.constant(self.c_s.clone()));
        let (hr, cr) = (g.constant(self.h_r.clone()), g.constant(self.c_r.clone()));
        let (ms, ls, hs2, cs2) = model.enc_s.step(&mut g, &p, xv, hs, cs);
        let (mr, lr, hr2, cr2) = model.enc_r.step(&mut g, &p, xv, hr, cr);
        self.h_s = g.value(hs2).clone();
        self.c_s = g.value(cs2).clone();
        self.h_r = g.value(hr2).clone();
        self.c_r = g.value(cr2).clone();
        let head = |mv, lv, n: usize| GaussianHead::new(g.value(mv).reshape(&[n]), g.value(lv).reshape(&[n]));
        let out = (head(ms, ls, model.dims.p)?, head(mr, lr, model.dims.q)?);
        self.last = Some(out.clone());
        Ok(out)
    }
}

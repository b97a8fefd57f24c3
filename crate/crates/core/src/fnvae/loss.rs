//! Batches of step windows and the FN-VAE objective.
//!
//! A window is a run of consecutive lifetime steps, possibly spanning
//! episodes. Row `k·B + b` of every stacked tensor belongs to step `k` of
//! window `b`. Time sums run over the window and are averaged over windows.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{FnVae, MaskMode};
use crate::env::StepRecord;
use crate::error::{Error, Result};
use crate::numkit::gaussian::{kl_elem, nll_elem, reparam};
use crate::numkit::{Bound, Graph, Tensor, Var};

/// Weights of the loss terms: `k` for reconstruction, prediction, KL,
/// sparsity and smoothness; `w` for the seven mask blocks in the order
/// s→s, a→s, θˢ→s, s→r, a→r, θˢ→θˢ, θʳ→θʳ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub k: [f64; 5],
    pub w: [f64; 7],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { k: [0.8, 0.8, 0.5, 0.1, 0.02], w: [0.1; 7] }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.k.iter().chain(&self.w).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Form of the smoothness penalty on consecutive change factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum SmoothnessVariant {
    /// `‖θ_t − θ_{t−1}‖₁`
    #[default]
    L1Diff,
    /// `‖θ_t − mean(θ_{t−1}, …, θ_{t−window})‖₁`, truncated at the start.
    MovingAverage { window: usize },
    /// `‖θ_t − (β·θ_{t−1} + (1−β)·v_{t−2})‖₁` with `v_t = β·θ_t + (1−β)·v_{t−1}`
    /// and a zero initial `v`.
    ExponentialMovingAverage { beta: f64 },
}


impl SmoothnessVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmoothnessVariant::MovingAverage { window } if window < 2 => {
                Err(Error::config("moving-average window must be ≥ 2"))
            }
            SmoothnessVariant::ExponentialMovingAverage { beta } if !(beta > 0.0 && beta < 1.0) => {
                Err(Error::config("EMA beta must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Weights on `θ_{j−1}, θ_{j−2}, …` forming the reference for position
    /// `j ≥ 1` of a sequence.
    pub fn lag_weights(&self, j: usize) -> Vec<f64> {
        match *self {
            SmoothnessVariant::L1Diff => vec![1.0],
            SmoothnessVariant::MovingAverage { window } => {
                let n = window.min(j);
                vec![1.0 / n as f64; n]
            }
            SmoothnessVariant::ExponentialMovingAverage { beta } => {
                (1..=j).map(|l| beta * (1.0 - beta).powi(l as i32 - 1)).collect()
            }
        }
    }
}

/// How change factors are indexed in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChangeMode {
    /// One θ per step; the LSTM state carries over episode boundaries.
    Continuous,
    /// One θ per segment between consecutive lifetime changepoints; the
    /// LSTM state resets at episode starts.
    Discrete { changepoints: Vec<u64> },
}

impl ChangeMode {
    pub fn validate(&self) -> Result<()> {
        if let ChangeMode::Discrete { changepoints } = self {
            if changepoints.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::contract("changepoints must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ChangeMode::Discrete { .. })
    }

    /// Segment id of a lifetime step (the step index itself when continuous).
    pub fn segment_of(&self, t_tilde: u64) -> u64 {
        match self {
            ChangeMode::Continuous => t_tilde,
            ChangeMode::Discrete { changepoints } => changepoints.partition_point(|&c| c <= t_tilde) as u64,
        }
    }
}

/// Windows plus everything derived from them: segment layout, loss rows and
/// the reparameterization noise.
#[derive(Clone, Debug)]
pub struct Batch {
    pub windows: Vec<Vec<StepRecord>>,
    pub len: usize,
    /// Segment of each stacked row.
    pub seg_of_row: Vec<usize>,
    /// Row whose encoder head defines each segment (its last step).
    pub seg_head_row: Vec<usize>,
    /// Segments of each window, in time order.
    pub seqs: Vec<Vec<usize>>,
    /// Per step, a `[B, 1]` keep-mask when some window resets its LSTM there.
    pub resets: Vec<Option<Tensor>>,
    pub rec_rows: Vec<(usize, usize)>,
    pub pred_rows: Vec<(usize, usize)>,
    pub eps_s: Tensor,
    pub eps_r: Tensor,
}

impl Batch {
    /// Builds a batch with fresh standard-normal noise drawn from `rng`.
    pub fn new(
        windows: Vec<Vec<StepRecord>>,
        mode: &ChangeMode,
        latent: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut b = Self::layout(windows, mode)?;
        let s = b.seg_head_row.len();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        b.eps_s = Tensor::matrix(s, latent.0, draw(s * latent.0));
        b.eps_r = Tensor::matrix(s, latent.1, draw(s * latent.1));
        Ok(b)
    }

    /// Builds a batch with the given noise (`[segments, p]` and `[segments, q]`).
    pub fn with_noise(windows: Vec<Vec<StepRecord>>, mode: &ChangeMode, eps_s: Tensor, eps_r: Tensor) -> Result<Self> {
        let mut b = Self::layout(windows, mode)?;
        let s = b.seg_head_row.len();
        if eps_s.rank() != 2 || eps_s.rows() != s || eps_r.rank() != 2 || eps_r.rows() != s {
            return Err(Error::contract(format!("noise must have {s} rows")));
        }
        b.eps_s = eps_s;
        b.eps_r = eps_r;
        Ok(b)
    }

    pub fn segments(&self) -> usize {
        self.seg_head_row.len()
    }

    pub fn batch_size(&self) -> usize {
        self.windows.len()
    }

    fn layout(windows: Vec<Vec<StepRecord>>, mode: &ChangeMode) -> Result<Self> {
        mode.validate()?;
        let bsz = windows.len();
        if bsz == 0 {
            return Err(Error::contract("empty batch"));
        }
        let len = windows[0].len();
        if len < 3 {
            return Err(Error::contract(format!("windows need at least 3 steps, got {len}")));
        }
        let (d, m) = (windows[0][0].s.len(), windows[0][0].a.len());
        for w in &windows {
            if w.len() != len {
                return Err(Error::contract("windows in a batch must have equal length"));
            }
            for (i, st) in w.iter().enumerate() {
                if st.s.len() != d || st.a.len() != m {
                    return Err(Error::contract("windows disagree on dimensions"));
                }
                if i > 0 && st.t_tilde != w[i - 1].t_tilde + 1 {
                    return Err(Error::contract("window steps must have consecutive lifetime indices"));
                }
            }
        }
        let row = |k: usize, b: usize| k * bsz + b;
        let discrete = mode.is_discrete();
        let mut seg_of_row = vec![0usize; len * bsz];
        let mut seg_head_row = Vec::new();
        let mut seqs = Vec::with_capacity(bsz);
        for (b, w) in windows.iter().enumerate() {
            let mut seq = Vec::new();
            for k in 0..len {
                let new_seg = k == 0 || mode.segment_of(w[k].t_tilde) != mode.segment_of(w[k - 1].t_tilde);
                if new_seg {
                    seq.push(seg_head_row.len());
                    seg_head_row.push(row(k, b));
                }
                let sid = *seq.last().expect("segment");
                seg_head_row[sid] = row(k, b);
                seg_of_row[row(k, b)] = sid;
            }
            seqs.push(seq);
        }
        let resets = (0..len)
            .map(|k| {
                if !discrete || k == 0 {
                    return None;
                }
                let keep: Vec<f64> = windows.iter().map(|w| if w[k].t == 0 { 0.0 } else { 1.0 }).collect();
                keep.contains(&0.0).then(|| Tensor::matrix(bsz, 1, keep))
            })
            .collect();
        let mut rec_rows = Vec::new();
        let mut pred_rows = Vec::new();
        for (b, w) in windows.iter().enumerate() {
            for k in 1..len - 1 {
                rec_rows.push((b, k));
                let boundary = w[k + 1].t == 0 || (discrete && seg_of_row[row(k + 1, b)] != seg_of_row[row(k, b)]);
                if !boundary {
                    pred_rows.push((b, k));
                }
            }
        }
        Ok(Self {
            windows,
            len,
            seg_of_row,
            seg_head_row,
            seqs,
            resets,
            rec_rows,
            pred_rows,
            eps_s: Tensor::zeros(&[0, 0]),
            eps_r: Tensor::zeros(&[0, 0]),
        })
    }

    fn row(&self, k: usize, b: usize) -> usize {
        k * self.windows.len() + b
    }
}

/// Values of every loss component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec_dyn: f64,
    pub pred_dyn: f64,
    pub rec_rw: f64,
    pub pred_rw: f64,
    pub kl: f64,
    pub sparse: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Loss nodes on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub rec_dyn: Var,
    pub pred_dyn: Var,
    pub rec_rw: Var,
    pub pred_rw: Var,
    pub kl: Var,
    pub sparse: Var,
    pub smooth: Var,
    pub total: Var,
}

/// A built objective with its graph and parameter binding.
pub struct LossGraph {
    pub g: Graph,
    pub bound: Bound,
    pub vars: LossVars,
}

impl LossGraph {
    pub fn report(&self) -> LossReport {
        let v = &self.vars;
        let it = |x: Var| self.g.item(x);
        LossReport {
            rec_dyn: it(v.rec_dyn),
            pred_dyn: it(v.pred_dyn),
            rec_rw: it(v.rec_rw),
            pred_rw: it(v.pred_rw),
            kl: it(v.kl),
            sparse: it(v.sparse),
            smooth: it(v.smooth),
            total: it(v.total),
        }
    }
}

/// Per-window encoder outputs stacked over steps.
struct Posterior {
    mean_s: Var,
    lv_s: Var,
    mean_r: Var,
    lv_r: Var,
}

fn encode(model: &FnVae, g: &mut Graph, p: &Bound, batch: &Batch) -> Posterior {
    let bsz = batch.batch_size();
    let (d, m) = (model.dims.d, model.dims.m);
    let hs = model.enc_s.hidden();
    let hr = model.enc_r.hidden();
    let (mut h_s, mut c_s) = (g.constant(Tensor::zeros(&[bsz, hs])), g.constant(Tensor::zeros(&[bsz, hs])));
    let (mut h_r, mut c_r) = (g.constant(Tensor::zeros(&[bsz, hr])), g.constant(Tensor::zeros(&[bsz, hr])));
    let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..batch.len {
        let mut x = Vec::with_capacity(bsz * (d + m + 1));
        for w in &batch.windows {
            x.extend_from_slice(&w[k].s);
            x.extend_from_slice(&w[k].a);
            x.push(w[k].r);
        }
        let x = g.constant(Tensor::matrix(bsz, d + m + 1, x));
        if let Some(keep) = &batch.resets[k] {
            let keep = g.constant(keep.clone());
            h_s = g.mul(h_s, keep);
            c_s = g.mul(c_s, keep);
            h_r = g.mul(h_r, keep);
            c_r = g.mul(c_r, keep);
        }
        let (ms, ls, h2, c2) = model.enc_s.step(g, p, x, h_s, c_s);
        (h_s, c_s) = (h2, c2);
        let (mr, lr, h2, c2) = model.enc_r.step(g, p, x, h_r, c_r);
        (h_r, c_r) = (h2, c2);
        out.0.push(ms);
        out.1.push(ls);
        out.2.push(mr);
        out.3.push(lr);
    }
    Posterior {
        mean_s: g.concat_rows(&out.0),
        lv_s: g.concat_rows(&out.1),
        mean_r: g.concat_rows(&out.2),
        lv_r: g.concat_rows(&out.3),
    }
}

/// Constant `[n, d+m]` block of `(s, a)` at `(b, k + off)` for each row.
fn sa_const(g: &mut Graph, batch: &Batch, rows: &[(usize, usize)], off: isize) -> Var {
    let w0 = &batch.windows[0][0];
    let width = w0.s.len() + w0.a.len();
    let mut x = Vec::with_capacity(rows.len() * width);
    for &(b, k) in rows {
        let st = &batch.windows[b][(k as isize + off) as usize];
        x.extend_from_slice(&st.s);
        x.extend_from_slice(&st.a);
    }
    g.constant(Tensor::matrix(rows.len(), width, x))
}

fn sum_or_zero(g: &mut Graph, parts: &[Var]) -> Var {
    let mut acc = g.scalar(0.0);
    for &p in parts {
        let s = g.sum(p);
        acc = g.add(acc, s);
    }
    acc
}

/// Smoothness over each window's segment sequence.
fn smoothness(g: &mut Graph, theta: Var, seqs: &[Vec<usize>], variant: &SmoothnessVariant) -> Var {
    let mut cur = Vec::new();
    let mut lags: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for seq in seqs {
        for j in 1..seq.len() {
            let wts = variant.lag_weights(j);
            let row = cur.len();
            cur.push(seq[j]);
            for (l, &wt) in wts.iter().enumerate() {
                if lags.len() <= l {
                    lags.push((Vec::new(), Vec::new()));
                }
                let (idx, w) = &mut lags[l];
                idx.resize(row, 0);
                w.resize(row, 0.0);
                idx.push(seq[j - 1 - l]);
                w.push(wt);
            }
        }
    }
    if cur.is_empty() {
        return g.scalar(0.0);
    }
    let n = cur.len();
    let now = g.gather_rows(theta, cur);
    let mut reference: Option<Var> = None;
    for (mut idx, mut w) in lags {
        idx.resize(n, 0);
        w.resize(n, 0.0);
        let past = g.gather_rows(theta, idx);
        let wv = g.constant(Tensor::matrix(n, 1, w));
        let term = g.mul(past, wv);
        reference = Some(match reference {
            Some(r) => g.add(r, term),
            None => term,
        });
    }
    let diff = match reference {
        Some(r) => g.sub(now, r),
        None => now,
    };
    let a = g.abs(diff);
    g.sum(a)
}

/// Builds the objective. With `frozen` false every parameter is a
/// differentiable leaf.
pub fn build_loss(
    model: &FnVae,
    batch: &Batch,
    weights: &LossWeights,
    variant: &SmoothnessVariant,
    mode: MaskMode,
    frozen: bool,
) -> Result<LossGraph> {
    weights.validate()?;
    variant.validate()?;
    let (d, m, p, q) = (model.dims.d, model.dims.m, model.dims.p, model.dims.q);
    let w0 = &batch.windows[0][0];
    if w0.s.len() != d || w0.a.len() != m {
        return Err(Error::contract(format!(
            "batch has d={}, m={}; model expects d={d}, m={m}",
            w0.s.len(),
            w0.a.len()
        )));
    }
    if batch.eps_s.cols() != p || batch.eps_r.cols() != q {
        return Err(Error::contract("noise width does not match the latent sizes"));
    }
    let mut g = Graph::new();
    let bound = if frozen { model.store.bind_frozen(&mut g) } else { model.store.bind(&mut g) };
    let masks = model.mask_vars(&mut g, &bound, mode);
    let post = encode(model, &mut g, &bound, batch);

    let seg_mean_s = g.gather_rows(post.mean_s, batch.seg_head_row.clone());
    let seg_lv_s = g.gather_rows(post.lv_s, batch.seg_head_row.clone());
    let seg_mean_r = g.gather_rows(post.mean_r, batch.seg_head_row.clone());
    let seg_lv_r = g.gather_rows(post.lv_r, batch.seg_head_row.clone());
    let eps_s = g.constant(batch.eps_s.clone());
    let eps_r = g.constant(batch.eps_r.clone());
    let theta_s_seg = reparam(&mut g, seg_mean_s, seg_lv_s, eps_s);
    let theta_r_seg = reparam(&mut g, seg_mean_r, seg_lv_r, eps_r);

    let seg_idx = |rows: &[(usize, usize)], off: isize| -> Vec<usize> {
        rows.iter().map(|&(b, k)| batch.seg_of_row[batch.row((k as isize + off) as usize, b)]).collect()
    };
    let nb = batch.batch_size() as f64;
    let tmask = model.transition_masks(&mut g, &masks);
    let rmask = model.reward_mask(&mut g, &masks);

    // Transition reconstruction: s_k | s_{k-1}, a_{k-1}, θˢ_k, skipping rows
    // whose previous step belongs to another episode.
    let rec_dyn_rows: Vec<(usize, usize)> =
        batch.rec_rows.iter().copied().filter(|&(b, k)| batch.windows[b][k].t != 0).collect();
    let rec_dyn = if rec_dyn_rows.is_empty() {
        g.scalar(0.0)
    } else {
        let prev = sa_const(&mut g, batch, &rec_dyn_rows, -1);
        let th = g.gather_rows(theta_s_seg, seg_idx(&rec_dyn_rows, 0));
        let x = g.concat_cols(&[prev, th]);
        let (mean, lv) = model.alpha1.forward(&mut g, &bound, x, &tmask);
        let target = states(&mut g, batch, &rec_dyn_rows, 0);
        let nll = nll_elem(&mut g, target, mean, lv);
        sum_or_zero(&mut g, &[nll])
    };
    // Transition prediction: s_{k+1} | s_k, a_k, θˢ_k.
    let pred_dyn = if batch.pred_rows.is_empty() {
        g.scalar(0.0)
    } else {
        let cur = sa_const(&mut g, batch, &batch.pred_rows, 0);
        let th = g.gather_rows(theta_s_seg, seg_idx(&batch.pred_rows, 0));
        let x = g.concat_cols(&[cur, th]);
        let (mean, lv) = model.alpha2.forward(&mut g, &bound, x);
        let target = states(&mut g, batch, &batch.pred_rows, 1);
        let nll = nll_elem(&mut g, target, mean, lv);
        sum_or_zero(&mut g, &[nll])
    };
    // Reward reconstruction: r_k | s_k, a_k, θʳ_k.
    let rec_rw = {
        let cur = sa_const(&mut g, batch, &batch.rec_rows, 0);
        let th = g.gather_rows(theta_r_seg, seg_idx(&batch.rec_rows, 0));
        let x = g.concat_cols(&[cur, th]);
        let (mean, lv) = model.beta1.forward(&mut g, &bound, x, &rmask);
        let target = rewards(&mut g, batch, &batch.rec_rows, 0);
        let nll = nll_elem(&mut g, target, mean, lv);
        sum_or_zero(&mut g, &[nll])
    };
    // Reward prediction: r_{k+1} | s_{k+1}, a_{k+1}, θʳ_k.
    let pred_rw = if batch.pred_rows.is_empty() {
        g.scalar(0.0)
    } else {
        let next = sa_const(&mut g, batch, &batch.pred_rows, 1);
        let th = g.gather_rows(theta_r_seg, seg_idx(&batch.pred_rows, 0));
        let x = g.concat_cols(&[next, th]);
        let (mean, lv) = model.beta2.forward(&mut g, &bound, x);
        let target = rewards(&mut g, batch, &batch.pred_rows, 1);
        let nll = nll_elem(&mut g, target, mean, lv);
        sum_or_zero(&mut g, &[nll])
    };

    // KL between each segment's posterior and the CF dynamics prior given
    // the previous segment's sample.
    let (mut cur, mut prev) = (Vec::new(), Vec::new());
    for seq in &batch.seqs {
        for j in 1..seq.len() {
            cur.push(seq[j]);
            prev.push(seq[j - 1]);
        }
    }
    let kl = if cur.is_empty() {
        g.scalar(0.0)
    } else {
        let mut parts = Vec::new();
        for (theta, mean, lv, prior, block, n) in [
            (theta_s_seg, seg_mean_s, seg_lv_s, &model.prior_s, masks.ctt_s, p),
            (theta_r_seg, seg_mean_r, seg_lv_r, &model.prior_r, masks.ctt_r, q),
        ] {
            let x = g.gather_rows(theta, prev.clone());
            let pm = model.prior_masks(&mut g, block, n);
            let (mp, lvp) = prior.forward(&mut g, &bound, x, &pm);
            let mq = g.gather_rows(mean, cur.clone());
            let lvq = g.gather_rows(lv, cur.clone());
            parts.push(kl_elem(&mut g, mq, lvq, mp, lvp));
        }
        sum_or_zero(&mut g, &parts)
    };

    let smooth_s = smoothness(&mut g, theta_s_seg, &batch.seqs, variant);
    let smooth_r = smoothness(&mut g, theta_r_seg, &batch.seqs, variant);
    let smooth = g.add(smooth_s, smooth_r);

    let sparse = {
        let mut acc = g.scalar(0.0);
        for (id, wt) in model.logits.all().into_iter().zip(weights.w) {
            if model.store.get(id).numel() == 0 {
                continue;
            }
            let s = g.sigmoid(bound.var(id));
            let s = g.sum(s);
            let s = g.scale(s, wt);
            acc = g.add(acc, s);
        }
        acc
    };

    let per_window = |g: &mut Graph, v: Var| g.scale(v, 1.0 / nb);
    let rec_dyn = per_window(&mut g, rec_dyn);
    let pred_dyn = per_window(&mut g, pred_dyn);
    let rec_rw = per_window(&mut g, rec_rw);
    let pred_rw = per_window(&mut g, pred_rw);
    let kl = per_window(&mut g, kl);
    let smooth = per_window(&mut g, smooth);

    let k = weights.k;
    let rec = g.add(rec_dyn, rec_rw);
    let pred = g.add(pred_dyn, pred_rw);
    let terms = [(rec, k[0]), (pred, k[1]), (kl, k[2]), (sparse, k[3]), (smooth, k[4])];
    let mut total = g.scalar(0.0);
    for (v, wt) in terms {
        let s = g.scale(v, wt);
        total = g.add(total, s);
    }
    let vars = LossVars { rec_dyn, pred_dyn, rec_rw, pred_rw, kl, sparse, smooth, total };
    Ok(LossGraph { g, bound, vars })
}

fn states(g: &mut Graph, batch: &Batch, rows: &[(usize, usize)], off: usize) -> Var {
    let d = batch.windows[0][0].s.len();
    let mut x = Vec::with_capacity(rows.len() * d);
    for &(b, k) in rows {
        x.extend_from_slice(&batch.windows[b][k + off].s);
    }
    g.constant(Tensor::matrix(rows.len(), d, x))
}

fn rewards(g: &mut Graph, batch: &Batch, rows: &[(usize, usize)], off: usize) -> Var {
    let x = rows.iter().map(|&(b, k)| batch.windows[b][k + off].r).collect();
    g.constant(Tensor::matrix(rows.len(), 1, x))
}

/// Loss values for a batch, without gradients.
pub fn compute_losses(
    model: &FnVae,
    batch: &Batch,
    weights: &LossWeights,
    variant: &SmoothnessVariant,
) -> Result<LossReport> {
    Ok(build_loss(model, batch, weights, variant, MaskMode::Soft, true)?.report())
}

/// Loss values with one θ per change segment, drawing the noise from `rng`.
pub fn compute_losses_discrete(
    model: &FnVae,
    windows: Vec<Vec<StepRecord>>,
    changepoints: &[u64],
    weights: &LossWeights,
    variant: &SmoothnessVariant,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    let mode = ChangeMode::Discrete { changepoints: changepoints.to_vec() };
    let batch = Batch::new(windows, &mode, (model.dims.p, model.dims.q), rng)?;
    compute_losses(model, &batch, weights, variant)
}

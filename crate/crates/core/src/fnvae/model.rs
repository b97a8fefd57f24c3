//! FN-VAE networks and mask logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dims, FnMdpGraph};
use crate::numkit::gaussian::clamp_log_var;
use crate::numkit::tape::sigmoid;
use crate::numkit::{Activation, Adam, Bound, Graph, Init, Linear, LstmCell, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::rng::substream;

pub const GROUP_PHI: &str = "phi";
pub const GROUP_GAMMA: &str = "gamma";
pub const GROUP_ALPHA: &str = "alpha";
pub const GROUP_BETA: &str = "beta";
pub const GROUP_G: &str = "G";

/// Layer sizes and latent dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub latent_s: usize,
    pub latent_r: usize,
    pub embed: usize,
    pub lstm_hidden: usize,
    pub decoder_hidden: usize,
    pub prior_hidden: usize,
    /// Initial value of every mask logit.
    pub mask_init_logit: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            latent_s: 2,
            latent_r: 2,
            embed: 32,
            lstm_hidden: 32,
            decoder_hidden: 32,
            prior_hidden: 16,
            mask_init_logit: 2.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_s == 0 || self.latent_r == 0 {
            return Err(Error::config("latent change-factor sizes must be ≥ 1"));
        }
        if self.embed == 0 || self.lstm_hidden == 0 || self.decoder_hidden == 0 || self.prior_hidden == 0 {
            return Err(Error::config("layer sizes must be ≥ 1"));
        }
        if !self.mask_init_logit.is_finite() {
            return Err(Error::config("mask_init_logit must be finite"));
        }
        Ok(())
    }
}

/// How masks enter forward passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// `sigmoid(logit)`, as in training.
    Soft,
    /// `sigmoid(logit) > 0.5` as constants.
    Hard,
}

/// CF inference network: tanh embedding, LSTM, Gaussian head.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub embed: Linear,
    pub lstm: LstmCell,
    pub head: Linear,
    pub out: usize,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, input: usize, arch: &ArchConfig, out: usize, rng: &mut impl Rng) -> Self {
        let embed = Linear::new(store, &format!("{name}.embed"), GROUP_PHI, input, arch.embed, Init::XavierUniform, rng);
        let lstm = LstmCell::new(store, &format!("{name}.lstm"), GROUP_PHI, arch.embed, arch.lstm_hidden, rng);
        let head =
            Linear::new(store, &format!("{name}.head"), GROUP_PHI, arch.lstm_hidden, 2 * out, Init::XavierUniform, rng);
        Self { embed, lstm, head, out }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    /// One step for a batch; returns `(mean, log_var, h, c)`.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> (Var, Var, Var, Var) {
        let e = self.embed.forward(g, p, x);
        let e = g.tanh(e);
        let (h2, c2) = self.lstm.step(g, p, e, h, c);
        let o = self.head.forward(g, p, h2);
        let mean = g.slice_cols(o, 0, self.out);
        let raw = g.slice_cols(o, self.out, 2 * self.out);
        (mean, clamp_log_var(g, raw), h2, c2)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Unit {
    hidden: Linear,
    head: Linear,
    skip: Option<ParamId>,
}

/// One small Gaussian net per output dimension, each reading its own masked
/// copy of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedGaussian {
    units: Vec<Unit>,
    pub inputs: usize,
}

impl MaskedGaussian {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        inputs: usize,
        outputs: usize,
        hidden: usize,
        identity_skip: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let units = (0..outputs)
            .map(|j| {
                let hidden_l =
                    Linear::new(store, &format!("{name}.{j}.hidden"), group, inputs, hidden, Init::XavierUniform, rng);
                let head = Linear::new(store, &format!("{name}.{j}.head"), group, hidden, 2, Init::XavierUniform, rng);
                let skip = identity_skip.then(|| {
                    let mut w = vec![0.0; inputs];
                    if j < inputs {
                        w[j] = 1.0;
                    }
                    store.add(format!("{name}.{j}.skip"), group, Tensor::matrix(inputs, 1, w))
                });
                Unit { hidden: hidden_l, head, skip }
            })
            .collect();
        Self { units, inputs }
    }

    pub fn outputs(&self) -> usize {
        self.units.len()
    }

    /// `x` is `[n, inputs]`; `masks[j]`, when present, is a `[1, inputs]`
    /// row multiplied into the input of output `j`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, masks: &[Option<Var>]) -> (Var, Var) {
        assert_eq!(masks.len(), self.units.len(), "one mask per output");
        let mut means = Vec::with_capacity(self.units.len());
        let mut lvs = Vec::with_capacity(self.units.len());
        for (u, m) in self.units.iter().zip(masks) {
            let xin = match m {
                Some(m) => g.mul(x, *m),
                None => x,
            };
            let h = u.hidden.forward(g, p, xin);
            let h = g.tanh(h);
            let o = u.head.forward(g, p, h);
            let mut mean = g.slice_cols(o, 0, 1);
            if let Some(s) = u.skip {
                let lin = g.matmul(xin, p.var(s));
                mean = g.add(mean, lin);
            }
            let raw = g.slice_cols(o, 1, 2);
            means.push(mean);
            lvs.push(clamp_log_var(g, raw));
        }
        (g.concat_cols(&means), g.concat_cols(&lvs))
    }
}

/// Unmasked Gaussian MLP with one tanh hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMlp {
    net: Mlp,
    pub out: usize,
}

impl GaussianMlp {
    fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        inputs: usize,
        out: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let net = Mlp::new(store, name, group, &[inputs, hidden, 2 * out], Activation::Tanh, Init::XavierUniform, rng);
        Self { net, out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let o = self.net.forward(g, p, x);
        let mean = g.slice_cols(o, 0, self.out);
        let raw = g.slice_cols(o, self.out, 2 * self.out);
        (mean, clamp_log_var(g, raw))
    }
}

/// Logit parameters of the seven mask blocks. The state and action to
/// reward blocks are stored as `[1, d]` and `[1, m]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLogits {
    pub css: ParamId,
    pub cas: ParamId,
    pub cts: ParamId,
    pub csr: ParamId,
    pub car: ParamId,
    pub ctt_s: ParamId,
    pub ctt_r: ParamId,
}

impl MaskLogits {
    pub fn all(&self) -> [ParamId; 7] {
        [self.css, self.cas, self.cts, self.csr, self.car, self.ctt_s, self.ctt_r]
    }
}

/// Mask blocks placed on a graph, soft or hard.
#[derive(Clone, Copy, Debug)]
pub struct MaskVars {
    pub css: Var,
    pub cas: Var,
    pub cts: Var,
    pub csr: Var,
    pub car: Var,
    pub ctt_s: Var,
    pub ctt_r: Var,
}

/// The FN-VAE: inference networks φ, CF dynamics priors γ, transition
/// decoders α, reward decoders β and mask logits G, in one parameter store.
#[derive(Clone, Debug)]
pub struct FnVae {
    /// `d`, `m` from the environment; `p`, `q` are the latent sizes.
    pub dims: Dims,
    pub arch: ArchConfig,
    pub store: ParamStore,
    pub enc_s: Encoder,
    pub enc_r: Encoder,
    pub prior_s: MaskedGaussian,
    pub prior_r: MaskedGaussian,
    pub alpha1: MaskedGaussian,
    pub alpha2: GaussianMlp,
    pub beta1: MaskedGaussian,
    pub beta2: GaussianMlp,
    pub logits: MaskLogits,
    pub(crate) opt: Adam,
}

impl FnVae {
    pub fn new(d: usize, m: usize, arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        if d == 0 {
            return Err(Error::config("state dimension must be ≥ 1"));
        }
        let (p, q) = (arch.latent_s, arch.latent_r);
        let dims = Dims { d, m, p, q };
        let mut rng = substream(seed, "fnvae-init");
        let mut store = ParamStore::new();
        let obs = d + m + 1;
        let enc_s = Encoder::new(&mut store, "phi_s", obs, arch, p, &mut rng);
        let enc_r = Encoder::new(&mut store, "phi_r", obs, arch, q, &mut rng);
        let prior_s = MaskedGaussian::new(&mut store, "gamma_s", GROUP_GAMMA, p, p, arch.prior_hidden, true, &mut rng);
        let prior_r = MaskedGaussian::new(&mut store, "gamma_r", GROUP_GAMMA, q, q, arch.prior_hidden, true, &mut rng);
        let h = arch.decoder_hidden;
        let alpha1 = MaskedGaussian::new(&mut store, "alpha1", GROUP_ALPHA, d + m + p, d, h, false, &mut rng);
        let alpha2 = GaussianMlp::new(&mut store, "alpha2", GROUP_ALPHA, d + m + p, d, h, &mut rng);
        let beta1 = MaskedGaussian::new(&mut store, "beta1", GROUP_BETA, d + m + q, 1, h, false, &mut rng);
        let beta2 = GaussianMlp::new(&mut store, "beta2", GROUP_BETA, d + m + q, 1, h, &mut rng);
        let l0 = arch.mask_init_logit;
        let mut block = |name: &str, r: usize, c: usize| {
            store.add(format!("mask.{name}"), GROUP_G, Tensor::full(&[r, c], l0))
        };
        let logits = MaskLogits {
            css: block("css", d, d),
            cas: block("cas", d, m),
            cts: block("cts", d, p),
            csr: block("csr", 1, d),
            car: block("car", 1, m),
            ctt_s: block("ctt_s", p, p),
            ctt_r: block("ctt_r", q, q),
        };
        Ok(Self {
            dims,
            arch: arch.clone(),
            store,
            enc_s,
            enc_r,
            prior_s,
            prior_r,
            alpha1,
            alpha2,
            beta1,
            beta2,
            logits,
            opt: Adam::new(1e-3),
        })
    }

    pub fn ids_in_group(&self, group: &str) -> Vec<ParamId> {
        self.store.ids_in_group(group).collect()
    }

    /// Places the mask blocks on `g`. Soft masks are differentiable in the
    /// logits when `p` binds them as parameters.
    pub fn mask_vars(&self, g: &mut Graph, p: &Bound, mode: MaskMode) -> MaskVars {
        let mut one = |id: ParamId| match mode {
            MaskMode::Soft => g.sigmoid(p.var(id)),
            MaskMode::Hard => {
                let t = self.store.get(id).map(|l| if sigmoid(l) > 0.5 { 1.0 } else { 0.0 });
                g.constant(t)
            }
        };
        let l = &self.logits;
        MaskVars {
            css: one(l.css),
            cas: one(l.cas),
            cts: one(l.cts),
            csr: one(l.csr),
            car: one(l.car),
            ctt_s: one(l.ctt_s),
            ctt_r: one(l.ctt_r),
        }
    }

    /// Per-state-dimension mask rows over `[s, a, θˢ]`.
    pub fn transition_masks(&self, g: &mut Graph, mv: &MaskVars) -> Vec<Option<Var>> {
        (0..self.dims.d)
            .map(|i| {
                let mut parts = vec![g.slice_rows(mv.css, i, i + 1)];
                if self.dims.m > 0 {
                    parts.push(g.slice_rows(mv.cas, i, i + 1));
                }
                parts.push(g.slice_rows(mv.cts, i, i + 1));
                Some(g.concat_cols(&parts))
            })
            .collect()
    }

    /// Mask row over `[s, a, θʳ]`; θʳ always feeds the reward.
    pub fn reward_mask(&self, g: &mut Graph, mv: &MaskVars) -> Vec<Option<Var>> {
        let ones = g.constant(Tensor::full(&[1, self.dims.q], 1.0));
        let mut parts = vec![mv.csr];
        if self.dims.m > 0 {
            parts.push(mv.car);
        }
        parts.push(ones);
        vec![Some(g.concat_cols(&parts))]
    }

    pub fn prior_masks(&self, g: &mut Graph, block: Var, n: usize) -> Vec<Option<Var>> {
        (0..n).map(|j| Some(g.slice_rows(block, j, j + 1))).collect()
    }

    /// Binary masks: an entry is present iff `sigmoid(logit) > threshold`.
    pub fn extract_masks(&self, threshold: f64) -> FnMdpGraph {
        let Dims { d, m, p, q } = self.dims;
        let mat = |id: ParamId, r: usize, c: usize| -> Vec<Vec<bool>> {
            let t = self.store.get(id);
            (0..r).map(|i| (0..c).map(|j| sigmoid(t.data()[i * c + j]) > threshold).collect()).collect()
        };
        let l = &self.logits;
        FnMdpGraph {
            dims: self.dims,
            css: mat(l.css, d, d),
            cas: mat(l.cas, d, m),
            cts: mat(l.cts, d, p),
            csr: mat(l.csr, 1, d).remove(0),
            car: mat(l.car, 1, m).remove(0),
            ctt_s: mat(l.ctt_s, p, p),
            ctt_r: mat(l.ctt_r, q, q),
        }
    }

    /// Sets every mask logit to `v`.
    pub fn set_mask_logits(&mut self, v: f64) {
        for id in self.logits.all() {
            self.store.get_mut(id).data_mut().fill(v);
        }
    }
}

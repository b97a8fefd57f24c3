//! The FANS-RL loop, interleaving FN-VAE model estimation with SAC on the
//! compact representation, plus oracle and SAC baselines and the
//! multi-seed comparison.

pub mod analysis;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use analysis::{distance_matrix, even_sample, spearman, theta_distance_matrix};

use crate::env::{Env, EnvSpec, Policy, ThetaProcess, Trajectory, UniformPolicy};
use crate::error::{Error, Result};
use crate::fnvae::{
    cf_prior, train_fnvae, train_step, ArchConfig, Batch, CfBlock, CfFilter, ChangeMode, FnVae, MaskMode, TrainConfig,
};
use crate::graph::{compact_representation, CompactRep, FnMdpGraph};
use crate::ident::shd_observed;
use crate::numkit::Tensor;
use crate::rng::{substream, subseed};
use crate::sac::{ReplayBuffer, Sac, SacBatch, SacConfig, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fansrl,
    Oracle,
    Sac,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fansrl, Method::Oracle, Method::Sac];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fansrl => "fansrl",
            Method::Oracle => "oracle",
            Method::Sac => "sac",
        }
    }
}

/// How change factors are estimated online.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// A new θ every step from the prior network.
    #[default]
    Continuous,
    /// θ updated only at the environment's changepoints.
    Discrete,
}

/// Behaviour during the initial collection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    Uniform,
    /// The untrained actor, fed zeros for every change-factor input.
    Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: usize,
    pub mode: RunMode,
    /// Episodes collected before any learning.
    pub n_init: usize,
    pub init_policy: InitPolicy,
    /// Steps per window in online model refreshes.
    pub window: usize,
    /// Environment steps between online model refreshes; 0 disables them.
    pub refresh_every: usize,
    pub refresh_batch: usize,
    pub updates_per_step: usize,
    /// Episodes between deterministic evaluation episodes; 0 disables them.
    pub eval_every: usize,
    pub mask_threshold: f64,
    /// Episodes in the trailing mean reported as the smoothed return.
    pub smoothing: usize,
    /// Episodes of history used for the θ estimation error.
    pub theta_err_episodes: usize,
    /// Standardize policy inputs with moments of the initial data.
    pub normalize_inputs: bool,
    /// Trailing episodes averaged into each seed's final return.
    pub final_episodes: usize,
    /// Trailing episodes from which θ samples are drawn for distance analysis.
    pub theta_window: usize,
    pub theta_points: usize,
    /// Set from the experiment's `fnvae` and `policy` sections.
    #[serde(skip)]
    pub arch: ArchConfig,
    #[serde(skip)]
    pub fnvae: TrainConfig,
    #[serde(skip)]
    pub sac: SacConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            mode: RunMode::Continuous,
            n_init: 20,
            init_policy: InitPolicy::Uniform,
            window: 50,
            refresh_every: 10,
            refresh_batch: 8,
            updates_per_step: 1,
            eval_every: 0,
            mask_threshold: 0.5,
            smoothing: 10,
            theta_err_episodes: 20,
            normalize_inputs: true,
            final_episodes: 20,
            theta_window: 50,
            theta_points: 10,
            arch: ArchConfig::default(),
            fnvae: TrainConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.refresh_batch == 0 || self.smoothing == 0 || self.theta_err_episodes == 0 {
            return Err(Error::config("run window must be ≥ 3; refresh_batch, smoothing, theta_err_episodes ≥ 1"));
        }
        if self.final_episodes == 0 || self.theta_points < 3 {
            return Err(Error::config("final_episodes must be ≥ 1 and theta_points ≥ 3"));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::config("mask_threshold must lie in (0, 1)"));
        }
        self.arch.validate()?;
        self.fnvae.validate()?;
        self.sac.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub smoothed: f64,
    pub eval_return: Option<f64>,
    pub shd: Option<usize>,
    pub theta_err: Option<f64>,
    pub wall_ms: u64,
}

/// The θ fed to the policy at one step, beside the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t_tilde: u64,
    pub episode: u64,
    pub t: usize,
    pub theta_s: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub true_s: Vec<f64>,
    pub true_r: Vec<f64>,
}

/// Per-episode change-factor bookkeeping of the FANS-RL runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTheta {
    pub episode: usize,
    /// Posterior mean the episode's first prior was computed from.
    pub handoff_s: Vec<f64>,
    pub handoff_r: Vec<f64>,
    /// Posterior mean after the episode's last step.
    pub posterior_s: Vec<f64>,
    pub posterior_r: Vec<f64>,
    /// True θʳ at the episode's last step.
    pub true_r: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub seed: u64,
    pub input_dim: usize,
    pub compact: CompactRep,
    pub learned_graph: Option<FnMdpGraph>,
    pub episodes: Vec<EpisodeRecord>,
    pub trace: Vec<StepTrace>,
    pub thetas: Vec<EpisodeTheta>,
    pub refreshes: usize,
}

impl RunMetrics {
    /// Mean training return over the last `n` episodes.
    pub fn final_mean(&self, n: usize) -> f64 {
        let k = n.min(self.episodes.len()).max(1);
        self.episodes.iter().rev().take(k).map(|e| e.ret).sum::<f64>() / k as f64
    }

    /// One row per episode: episode, return, smoothed, eval_return, shd,
    /// theta_err, wall_ms.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.episodes {
            wr.serialize(e).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

type Theta = (Vec<f64>, Vec<f64>);

/// Supplies the change factors the policy sees.
trait ThetaSource: Clone {
    fn begin_episode(&mut self, t_tilde: u64, truth: (&[f64], &[f64])) -> Result<Theta>;
    /// Absorbs step `(s, a, r)` and returns θ for the following step.
    fn observe(&mut self, s: &[f64], a: &[f64], r: f64, next_t_tilde: u64, next_truth: (&[f64], &[f64])) -> Result<Theta>;
    fn after_step(&mut self, _buffer: &ReplayBuffer, _rng: &mut ChaCha8Rng) -> Result<()> {
        Ok(())
    }
    fn episode_theta(&self, _episode: usize, _true_r: &[f64]) -> Option<EpisodeTheta> {
        None
    }
    fn refreshes(&self) -> usize {
        0
    }
}

#[derive(Clone)]
struct NoTheta;

impl ThetaSource for NoTheta {
    fn begin_episode(&mut self, _: u64, _: (&[f64], &[f64])) -> Result<Theta> {
        Ok((vec![], vec![]))
    }

    fn observe(&mut self, _: &[f64], _: &[f64], _: f64, _: u64, _: (&[f64], &[f64])) -> Result<Theta> {
        Ok((vec![], vec![]))
    }
}

#[derive(Clone)]
struct TrueTheta;

impl ThetaSource for TrueTheta {
    fn begin_episode(&mut self, _: u64, truth: (&[f64], &[f64])) -> Result<Theta> {
        Ok((truth.0.to_vec(), truth.1.to_vec()))
    }

    fn observe(&mut self, _: &[f64], _: &[f64], _: f64, _: u64, truth: (&[f64], &[f64])) -> Result<Theta> {
        Ok((truth.0.to_vec(), truth.1.to_vec()))
    }
}

/// Posterior filtering plus prior propagation through the FN-VAE.
#[derive(Clone)]
struct LearnedTheta {
    model: FnVae,
    filter: CfFilter,
    changepoints: Option<Vec<u64>>,
    change_mode: ChangeMode,
    cur: Theta,
    /// Posterior mean after the most recent observation.
    post: Theta,
    handoff: Theta,
    last_change: Option<u64>,
    frozen: Vec<Tensor>,
    train: TrainConfig,
    every: usize,
    batch: usize,
    window: usize,
    steps: usize,
    refreshes: usize,
}

impl LearnedTheta {
    fn new(model: FnVae, cfg: &RunConfig, change_mode: ChangeMode) -> Result<Self> {
        let zero = (vec![0.0; model.dims.p], vec![0.0; model.dims.q]);
        let frozen = model.logits.all().iter().map(|&id| model.store.get(id).clone()).collect();
        let changepoints = match &change_mode {
            ChangeMode::Continuous => None,
            ChangeMode::Discrete { changepoints } => Some(changepoints.clone()),
        };
        let mut src = Self {
            filter: CfFilter::new(&model),
            model,
            changepoints,
            change_mode,
            cur: zero.clone(),
            post: zero.clone(),
            handoff: zero,
            last_change: None,
            frozen,
            train: cfg.fnvae.clone(),
            every: cfg.refresh_every,
            batch: cfg.refresh_batch,
            window: cfg.window,
            steps: 0,
            refreshes: 0,
        };
        src.cur = src.prior(&src.post)?;
        Ok(src)
    }

    fn prior(&self, th: &Theta) -> Result<Theta> {
        let s = cf_prior(&self.model, CfBlock::State, &th.0, MaskMode::Soft)?;
        let r = cf_prior(&self.model, CfBlock::Reward, &th.1, MaskMode::Soft)?;
        Ok((s.mean.into_data(), r.mean.into_data()))
    }

    fn is_change(&self, t_tilde: u64) -> bool {
        self.changepoints.as_ref().is_some_and(|c| c.binary_search(&t_tilde).is_ok())
    }
}

impl ThetaSource for LearnedTheta {
    fn begin_episode(&mut self, t_tilde: u64, _: (&[f64], &[f64])) -> Result<Theta> {
        if self.changepoints.is_none() {
            // θ for step 0 comes from the last posterior of the previous episode.
            self.handoff = self.post.clone();
            self.cur = self.prior(&self.handoff)?;
        } else {
            if self.is_change(t_tilde) && self.last_change != Some(t_tilde) {
                self.cur = self.prior(&self.post)?;
                self.last_change = Some(t_tilde);
            }
            self.handoff = self.post.clone();
            self.filter.reset();
        }
        Ok(self.cur.clone())
    }

    fn observe(&mut self, s: &[f64], a: &[f64], r: f64, next_t_tilde: u64, _: (&[f64], &[f64])) -> Result<Theta> {
        let (hs, hr) = self.filter.observe(&self.model, s, a, r)?;
        self.post = (hs.mean.into_data(), hr.mean.into_data());
        if self.changepoints.is_none() {
            self.cur = self.prior(&self.post)?;
        } else if self.is_change(next_t_tilde) {
            self.cur = self.prior(&self.post)?;
            self.last_change = Some(next_t_tilde);
        }
        Ok(self.cur.clone())
    }

    fn after_step(&mut self, buffer: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<()> {
        self.steps += 1;
        if self.every == 0 || !self.steps.is_multiple_of(self.every) {
            return Ok(());
        }
        let len = self.window.min(buffer.longest_run());
        if len < 3 {
            return Ok(());
        }
        let windows = (0..self.batch).map(|_| buffer.contiguous(len, rng)).collect::<Result<Vec<_>>>()?;
        let batch = Batch::new(windows, &self.change_mode, (self.model.dims.p, self.model.dims.q), rng)?;
        train_step(&mut self.model, &batch, &self.train, false)?;
        let logits = self.model.logits.all();
        if logits.iter().zip(&self.frozen).any(|(&id, t)| self.model.store.get(id) != t) {
            return Err(Error::contract("mask logits moved during an online refresh"));
        }
        self.refreshes += 1;
        Ok(())
    }

    fn episode_theta(&self, episode: usize, true_r: &[f64]) -> Option<EpisodeTheta> {
        Some(EpisodeTheta {
            episode,
            handoff_s: self.handoff.0.clone(),
            handoff_r: self.handoff.1.clone(),
            posterior_s: self.post.0.clone(),
            posterior_r: self.post.1.clone(),
            true_r: true_r.to_vec(),
        })
    }

    fn refreshes(&self) -> usize {
        self.refreshes
    }
}

/// Policy input: the selected state dimensions, then θˢ, then θʳ.
pub fn project(rep: &CompactRep, s: &[f64], theta_s: &[f64], theta_r: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(rep.input_dim());
    x.extend(rep.state.iter().map(|&i| s[i]));
    x.extend(rep.theta_s.iter().map(|&i| theta_s[i]));
    x.extend(rep.theta_r.iter().map(|&i| theta_r[i]));
    x
}

/// Compact projection followed by a fixed per-feature standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    pub rep: CompactRep,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Projector {
    pub fn identity(rep: CompactRep) -> Self {
        let n = rep.input_dim();
        Self { rep, mean: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Standardizes with the moments of the projected `data`; features with
    /// no spread are only centred.
    pub fn fit(rep: CompactRep, data: &[Transition]) -> Self {
        let mut p = Self::identity(rep);
        if data.len() < 2 {
            return p;
        }
        let xs: Vec<Vec<f64>> = data.iter().map(|t| project(&p.rep, &t.s, &t.theta_s, &t.theta_r)).collect();
        for j in 0..p.mean.len() {
            let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
            let (m, sd) = mean_std(&col);
            p.mean[j] = m;
            p.scale[j] = if sd > 1e-8 { 1.0 / sd } else { 1.0 };
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.rep.input_dim()
    }

    pub fn apply(&self, s: &[f64], theta_s: &[f64], theta_r: &[f64]) -> Vec<f64> {
        let mut x = project(&self.rep, s, theta_s, theta_r);
        for ((v, m), k) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) * k;
        }
        x
    }
}

enum Acting {
    Sample,
    Mean,
}

struct Episode {
    ret: f64,
    trace: Vec<StepTrace>,
    true_r: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn rollout<S: ThetaSource>(
    env: &mut Env,
    src: &mut S,
    sac: &mut Sac,
    proj: &Projector,
    acting: Acting,
    rng: &mut ChaCha8Rng,
    mut hook: impl FnMut(Transition, &mut S, &mut Sac) -> Result<()>,
) -> Result<Episode> {
    let mut s = env.reset();
    let st = env.state().clone();
    let (mut ths, mut thr) = src.begin_episode(st.t_tilde, (&st.theta_s, &st.theta_r))?;
    let mut ret = 0.0;
    let mut trace = Vec::with_capacity(env.spec().horizon);
    loop {
        let st = env.state().clone();
        let a = match acting {
            Acting::Sample => sac.act(&proj.apply(&s, &ths, &thr), false, rng)?,
            Acting::Mean => sac.act(&proj.apply(&s, &ths, &thr), true, rng)?,
        };
        let out = env.step(&a)?;
        let a: Vec<f64> = a.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
        ret += out.reward;
        let nx = env.state();
        let (nths, nthr) = src.observe(&s, &a, out.reward, nx.t_tilde, (&nx.theta_s, &nx.theta_r))?;
        trace.push(StepTrace {
            t_tilde: st.t_tilde,
            episode: st.episode,
            t: st.t,
            theta_s: ths.clone(),
            theta_r: thr.clone(),
            true_s: st.theta_s.clone(),
            true_r: st.theta_r.clone(),
        });
        let tr = Transition {
            s,
            a,
            r: out.reward,
            theta_s: ths,
            theta_r: thr,
            s_next: out.next_s.clone(),
            theta_s_next: nths.clone(),
            theta_r_next: nthr.clone(),
            done: out.done,
            t: st.t,
            t_tilde: st.t_tilde,
            episode: st.episode,
        };
        hook(tr, src, sac)?;
        if out.done {
            return Ok(Episode { ret, trace, true_r: st.theta_r });
        }
        s = out.next_s;
        ths = nths;
        thr = nthr;
    }
}

/// Feeds recorded episodes through `src`, yielding the transitions the
/// online loop would have stored.
fn replay<S: ThetaSource>(src: &mut S, trajs: &[Trajectory]) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for tr in trajs {
        let Some(first) = tr.steps.first() else { continue };
        let (mut ths, mut thr) = src.begin_episode(first.t_tilde, (&first.theta_s, &first.theta_r))?;
        for (i, st) in tr.steps.iter().enumerate() {
            let next = tr.steps.get(i + 1).unwrap_or(st);
            let (nths, nthr) = src.observe(&st.s, &st.a, st.r, st.t_tilde + 1, (&next.theta_s, &next.theta_r))?;
            out.push(Transition {
                s: st.s.clone(),
                a: st.a.clone(),
                r: st.r,
                theta_s: ths,
                theta_r: thr,
                s_next: tr.next_state(i).to_vec(),
                theta_s_next: nths.clone(),
                theta_r_next: nthr.clone(),
                done: i + 1 == tr.steps.len(),
                t: st.t,
                t_tilde: st.t_tilde,
                episode: st.episode,
            });
            ths = nths;
            thr = nthr;
        }
    }
    Ok(out)
}

/// RMS residual of the best affine map from the estimates to the truth,
/// pooled over every true dimension. `None` without estimates or rows.
pub fn theta_error(trace: &[StepTrace]) -> Option<f64> {
    let first = trace.first()?;
    let k = first.theta_s.len() + first.theta_r.len();
    let t = first.true_s.len() + first.true_r.len();
    if k == 0 || t == 0 || trace.len() <= k + 1 {
        return None;
    }
    let n = trace.len();
    let x = DMatrix::from_fn(n, k + 1, |i, j| {
        let st = &trace[i];
        match j {
            0 => 1.0,
            j if j <= st.theta_s.len() => st.theta_s[j - 1],
            j => st.theta_r[j - 1 - st.theta_s.len()],
        }
    });
    let y = DMatrix::from_fn(n, t, |i, j| {
        let st = &trace[i];
        if j < st.true_s.len() {
            st.true_s[j]
        } else {
            st.true_r[j - st.true_s.len()]
        }
    });
    let beta = x.clone().svd(true, true).solve(&y, 1e-10).ok()?;
    let resid = y - x * beta;
    Some((resid.norm_squared() / (n * t) as f64).sqrt())
}

/// Changepoints of both change-factor blocks over `lifetime` steps.
pub fn env_changepoints(spec: &EnvSpec, lifetime: u64) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for proc in [&spec.theta_s, &spec.theta_r] {
        match proc {
            ThetaProcess::Scheduled { schedule, .. } if schedule.is_discrete() => {
                out.extend(schedule.changepoints(spec.horizon, lifetime));
            }
            _ if proc.dim() == 0 => {}
            _ => {
                return Err(Error::contract(
                    "discrete run mode needs piecewise-constant schedules for every change factor",
                ))
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

struct Setup {
    env: Env,
    init: Vec<Trajectory>,
    rng_act: ChaCha8Rng,
}

fn setup(spec: &EnvSpec, cfg: &RunConfig, seed: u64, sac_for_init: Option<(&Sac, &CompactRep)>) -> Result<Setup> {
    cfg.validate()?;
    let mut env = Env::new(spec.clone(), subseed(seed, "env"))?;
    let mut rng_act = substream(seed, "act");
    let mut init = Vec::with_capacity(cfg.n_init);
    match (cfg.init_policy, sac_for_init) {
        (InitPolicy::Policy, Some((sac, rep))) => {
            let p = rep.theta_s.iter().max().map_or(0, |&i| i + 1);
            let q = rep.theta_r.iter().max().map_or(0, |&i| i + 1);
            let mut policy = ActorPolicy { sac, rep, zeros: (vec![0.0; p], vec![0.0; q]), rng: &mut rng_act };
            for _ in 0..cfg.n_init {
                init.push(env.rollout(&mut policy, true)?);
            }
        }
        _ => {
            let mut policy = UniformPolicy::new(spec.dims().m, subseed(seed, "init-policy"));
            for _ in 0..cfg.n_init {
                init.push(env.rollout(&mut policy, true)?);
            }
        }
    }
    Ok(Setup { env, init, rng_act })
}

struct ActorPolicy<'a> {
    sac: &'a Sac,
    rep: &'a CompactRep,
    zeros: Theta,
    rng: &'a mut ChaCha8Rng,
}

impl Policy for ActorPolicy<'_> {
    fn act(&mut self, s: &[f64], _: &crate::env::EnvState) -> Vec<f64> {
        let x = project(self.rep, s, &self.zeros.0, &self.zeros.1);
        self.sac.act(&x, false, self.rng).expect("input width fixed by the compact representation")
    }
}

#[allow(clippy::too_many_arguments)]
fn online<S: ThetaSource>(
    method: Method,
    seed: u64,
    cfg: &RunConfig,
    mut st: Setup,
    mut src: S,
    mut sac: Sac,
    rep: CompactRep,
    learned_graph: Option<FnMdpGraph>,
    shd: Option<usize>,
) -> Result<RunMetrics> {
    let start = Instant::now();
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity)?;
    let init = replay(&mut src, &st.init)?;
    let proj = if cfg.normalize_inputs { Projector::fit(rep.clone(), &init) } else { Projector::identity(rep.clone()) };
    for tr in init {
        buffer.push(tr);
    }
    let mut rng_update = substream(seed, "update");
    let mut rng_eval = substream(seed, "eval");
    let mut metrics = RunMetrics {
        method,
        seed,
        input_dim: rep.input_dim(),
        compact: rep.clone(),
        learned_graph,
        episodes: Vec::with_capacity(cfg.episodes),
        trace: Vec::new(),
        thetas: Vec::new(),
        refreshes: 0,
    };
    let horizon = st.env.spec().horizon;
    for ep in 0..cfg.episodes {
        let batch = cfg.sac.batch;
        let updates = cfg.updates_per_step;
        let buf = &mut buffer;
        let rng_u = &mut rng_update;
        let episode = rollout(&mut st.env, &mut src, &mut sac, &proj, Acting::Sample, &mut st.rng_act, |tr, src, sac| {
            buf.push(tr);
            if buf.len() >= batch {
                for _ in 0..updates {
                    let picked = buf.sample(batch, rng_u)?;
                    let b = SacBatch::new(
                        picked.iter().map(|t| proj.apply(&t.s, &t.theta_s, &t.theta_r)).collect(),
                        picked.iter().map(|t| t.a.clone()).collect(),
                        picked.iter().map(|t| t.r).collect(),
                        picked.iter().map(|t| proj.apply(&t.s_next, &t.theta_s_next, &t.theta_r_next)).collect(),
                        picked.iter().map(|t| t.done).collect(),
                    )?;
                    sac.update(&b, rng_u)?;
                }
            }
            src.after_step(buf, rng_u)
        })
        .map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{} seed {seed} episode {ep}: {m}", method.name())),
            other => other,
        })?;
        if let Some(th) = src.episode_theta(ep, &episode.true_r) {
            metrics.thetas.push(th);
        }
        metrics.trace.extend(episode.trace);
        let eval_return = if cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0 {
            let mut env = st.env.clone();
            let mut s = src.clone();
            Some(rollout(&mut env, &mut s, &mut sac, &proj, Acting::Mean, &mut rng_eval, |_, _, _| Ok(()))?.ret)
        } else {
            None
        };
        let k = cfg.smoothing.min(ep + 1);
        let smoothed = (metrics.episodes.iter().rev().take(k - 1).map(|e| e.ret).sum::<f64>() + episode.ret) / k as f64;
        let recent = cfg.theta_err_episodes * horizon;
        let tail = &metrics.trace[metrics.trace.len().saturating_sub(recent)..];
        metrics.episodes.push(EpisodeRecord {
            episode: ep,
            ret: episode.ret,
            smoothed,
            eval_return,
            shd,
            theta_err: theta_error(tail),
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    metrics.refreshes = src.refreshes();
    Ok(metrics)
}

/// FANS-RL: learn the model from initial data, extract the compact
/// representation, then interleave policy learning with model refreshes.
pub fn run_fansrl(spec: &EnvSpec, cfg: &RunConfig, seed: u64) -> Result<RunMetrics> {
    let dims = spec.dims();
    let st = setup(spec, cfg, seed, None)?;
    let change_mode = match cfg.mode {
        RunMode::Continuous => ChangeMode::Continuous,
        RunMode::Discrete => {
            let lifetime = ((cfg.n_init + cfg.episodes) * spec.horizon) as u64;
            ChangeMode::Discrete { changepoints: env_changepoints(spec, lifetime)? }
        }
    };
    let mut model = FnVae::new(dims.d, dims.m, &cfg.arch, subseed(seed, "fnvae"))?;
    if !st.init.is_empty() {
        train_fnvae(&mut model, &st.init, &change_mode, &cfg.fnvae, true, subseed(seed, "fnvae-train"))?;
    }
    let graph = model.extract_masks(cfg.mask_threshold);
    let rep = compact_representation(&graph);
    let shd = shd_observed(&graph, &spec.graph).ok();
    let sac = Sac::new(rep.input_dim(), dims.m, &cfg.sac, subseed(seed, "sac"))?;
    let src = LearnedTheta::new(model, cfg, change_mode)?;
    online(Method::Fansrl, seed, cfg, st, src, sac, rep, Some(graph), shd)
}

/// SAC with the true change factors appended to the full state.
pub fn run_oracle(spec: &EnvSpec, cfg: &RunConfig, seed: u64) -> Result<RunMetrics> {
    let d = spec.dims();
    let rep = CompactRep { state: (0..d.d).collect(), theta_s: (0..d.p).collect(), theta_r: (0..d.q).collect() };
    let sac = Sac::new(rep.input_dim(), d.m, &cfg.sac, subseed(seed, "sac"))?;
    let st = setup(spec, cfg, seed, Some((&sac, &rep)))?;
    if !st.init.iter().all(Trajectory::has_theta) && d.p + d.q > 0 {
        return Err(Error::contract("the oracle needs recorded change factors"));
    }
    online(Method::Oracle, seed, cfg, st, TrueTheta, sac, rep, None, None)
}

/// SAC on the full state alone.
pub fn run_sac_baseline(spec: &EnvSpec, cfg: &RunConfig, seed: u64) -> Result<RunMetrics> {
    let d = spec.dims();
    let rep = CompactRep { state: (0..d.d).collect(), theta_s: vec![], theta_r: vec![] };
    let sac = Sac::new(rep.input_dim(), d.m, &cfg.sac, subseed(seed, "sac"))?;
    let st = setup(spec, cfg, seed, Some((&sac, &rep)))?;
    online(Method::Sac, seed, cfg, st, NoTheta, sac, rep, None, None)
}

pub fn run_method(method: Method, spec: &EnvSpec, cfg: &RunConfig, seed: u64) -> Result<RunMetrics> {
    match method {
        Method::Fansrl => run_fansrl(spec, cfg, seed),
        Method::Oracle => run_oracle(spec, cfg, seed),
        Method::Sac => run_sac_baseline(spec, cfg, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Mean return over each seed's final episodes, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub seeds: Vec<u64>,
    pub final_episodes: usize,
    pub methods: Vec<MethodSummary>,
}

impl CompareSummary {
    pub fn get(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs every `(method, seed)` pair on up to `threads` workers. Results are
/// ordered by method, then seed.
pub fn run_many(
    methods: &[Method],
    spec: &EnvSpec,
    cfg: &RunConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<RunMetrics>> {
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunMetrics>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|sc| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(m, s)) = jobs.get(i) else { break };
                let r = run_method(m, spec, cfg, s);
                results.lock().expect("no worker panicked holding the lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn summarize(runs: &[RunMetrics], final_episodes: usize) -> CompareSummary {
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let methods = methods
        .into_iter()
        .map(|m| {
            let per_seed: Vec<f64> = runs.iter().filter(|r| r.method == m).map(|r| r.final_mean(final_episodes)).collect();
            let (mean, std) = mean_std(&per_seed);
            MethodSummary { method: m, per_seed, mean, std }
        })
        .collect();
    CompareSummary { seeds, final_episodes, methods }
}

/// Learned θʳ posteriors and true θʳ at `n` episodes spread over the last
/// `window` episodes of a FANS-RL run.
pub fn theta_samples(run: &RunMetrics, window: usize, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let len = run.thetas.len();
    let idx = even_sample(len.saturating_sub(window), len, n);
    let learned = idx.iter().map(|&i| run.thetas[i].posterior_r.clone()).collect();
    let truth = idx.iter().map(|&i| run.thetas[i].true_r.clone()).collect();
    (learned, truth)
}

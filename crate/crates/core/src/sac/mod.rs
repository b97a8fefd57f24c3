//! Soft actor-critic on the compact representation: a tanh-squashed Gaussian
//! actor, twin critics with Polyak-tracked targets and a learned temperature.

pub mod buffer;

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, Transition};

use crate::checkpoint::{find, Section};
use crate::error::{Error, Result};
use crate::numkit::{Activation, Adam, Bound, Graph, Init, Mlp, ParamStore, Tensor, Var};
use crate::rng::substream;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Temperature {
    /// Tuned toward the target entropy, starting at `init`.
    Learned { init: f64 },
    Fixed { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_scale: f64,
    pub discount: f64,
    pub polyak: f64,
    pub lr: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub temperature: Temperature,
    /// Defaults to `−m`.
    pub target_entropy: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            init_scale: 0.1,
            discount: 0.99,
            polyak: 0.005,
            lr: 3e-4,
            batch: 64,
            buffer_capacity: 100_000,
            temperature: Temperature::Learned { init: 0.2 },
            target_entropy: None,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch == 0 || self.buffer_capacity == 0 {
            return Err(Error::config("sac hidden, layers, batch and buffer_capacity must be positive"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("sac init_scale must be positive"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("sac discount must lie in [0, 1)"));
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(Error::config("sac polyak must lie in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("sac lr must be positive"));
        }
        match self.temperature {
            Temperature::Learned { init } if !(init > 0.0 && init.is_finite()) => {
                Err(Error::config("initial temperature must be positive"))
            }
            Temperature::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                Err(Error::config("fixed temperature must be nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

/// A batch of policy-space transitions: inputs are already projected onto
/// the compact representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SacBatch {
    pub obs: Tensor,
    pub act: Tensor,
    pub rew: Tensor,
    pub next_obs: Tensor,
    pub done: Tensor,
}

impl SacBatch {
    pub fn new(obs: Vec<Vec<f64>>, act: Vec<Vec<f64>>, rew: Vec<f64>, next_obs: Vec<Vec<f64>>, done: Vec<bool>) -> Result<Self> {
        let n = obs.len();
        if n == 0 || act.len() != n || rew.len() != n || next_obs.len() != n || done.len() != n {
            return Err(Error::contract("sac batch parts must be nonempty and of equal length"));
        }
        let width = |rows: &[Vec<f64>]| -> Result<()> {
            if rows.iter().any(|r| r.len() != rows[0].len()) {
                return Err(Error::contract("ragged sac batch"));
            }
            Ok(())
        };
        width(&obs)?;
        width(&act)?;
        width(&next_obs)?;
        Ok(Self {
            obs: Tensor::from_rows(&obs),
            act: Tensor::from_rows(&act),
            rew: Tensor::matrix(n, 1, rew),
            next_obs: Tensor::from_rows(&next_obs),
            done: Tensor::matrix(n, 1, done.into_iter().map(|d| if d { 1.0 } else { 0.0 }).collect()),
        })
    }

    pub fn len(&self) -> usize {
        self.obs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub temperature: f64,
    pub entropy: f64,
    pub q_mean: f64,
    pub target_mean: f64,
}

#[derive(Clone, Debug)]
pub struct Critics {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl Critics {
    fn eval(&self, g: &mut Graph, p: &Bound, obs: Var, act: Var) -> (Var, Var) {
        let x = g.concat_cols(&[obs, act]);
        (self.q1.forward(g, p, x), self.q2.forward(g, p, x))
    }
}

#[derive(Clone, Debug)]
pub struct Sac {
    pub cfg: SacConfig,
    input_dim: usize,
    m: usize,
    pub actor_store: ParamStore,
    pub critic_store: ParamStore,
    pub target_store: ParamStore,
    pub actor: Mlp,
    pub critics: Critics,
    log_temp: f64,
    actor_opt: Adam,
    critic_opt: Adam,
    temp_opt: Adam,
    temp_param: ParamStore,
}

/// Squashed-Gaussian sample and its log-density.
struct PolicyOut {
    action: Var,
    log_prob: Var,
}

impl Sac {
    pub fn new(input_dim: usize, m: usize, cfg: &SacConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || m == 0 {
            return Err(Error::contract("sac needs a nonempty input and action"));
        }
        let mut rng = substream(seed, "sac-init");
        let init = Init::Normal(cfg.init_scale);
        let sizes = |i: usize, o: usize| {
            let mut v = vec![i];
            v.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
            v.push(o);
            v
        };
        let mut actor_store = ParamStore::new();
        let actor = Mlp::new(&mut actor_store, "actor", "actor", &sizes(input_dim, 2 * m), Activation::Relu, init, &mut rng);
        let mut critic_store = ParamStore::new();
        let q1 = Mlp::new(&mut critic_store, "q1", "critic", &sizes(input_dim + m, 1), Activation::Relu, init, &mut rng);
        let q2 = Mlp::new(&mut critic_store, "q2", "critic", &sizes(input_dim + m, 1), Activation::Relu, init, &mut rng);
        let log_temp = match cfg.temperature {
            Temperature::Learned { init } => init.ln(),
            Temperature::Fixed { value } => value.ln(),
        };
        let mut temp_param = ParamStore::new();
        temp_param.add("log_temperature", "temperature", Tensor::scalar(log_temp));
        Ok(Self {
            cfg: cfg.clone(),
            input_dim,
            m,
            target_store: critic_store.clone(),
            actor_store,
            critic_store,
            actor,
            critics: Critics { q1, q2 },
            log_temp,
            actor_opt: Adam::new(cfg.lr),
            critic_opt: Adam::new(cfg.lr),
            temp_opt: Adam::new(cfg.lr),
            temp_param,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.m
    }

    pub fn temperature(&self) -> f64 {
        match self.cfg.temperature {
            Temperature::Fixed { value } => value,
            Temperature::Learned { .. } => self.log_temp.exp(),
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.m as f64))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::contract(format!(
                "policy input has {} entries, the compact representation has {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_batch(&self, b: &SacBatch) -> Result<()> {
        if b.obs.cols() != self.input_dim || b.next_obs.cols() != self.input_dim || b.act.cols() != self.m {
            return Err(Error::contract(format!(
                "batch widths obs {} / act {}; expected {} / {}",
                b.obs.cols(),
                b.act.cols(),
                self.input_dim,
                self.m
            )));
        }
        Ok(())
    }

    fn policy(&self, g: &mut Graph, p: &Bound, obs: Var, eps: &Tensor) -> PolicyOut {
        let m = self.m;
        let out = self.actor.forward(g, p, obs);
        let mean = g.slice_cols(out, 0, m);
        let raw = g.slice_cols(out, m, 2 * m);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        let std = g.exp(log_std);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e);
        let u = g.add(mean, noise);
        let action = g.tanh(u);
        // log N(u; mean, std) with u − mean = std·ε.
        let e2 = g.constant(eps.map(|x| -0.5 * x * x - 0.5 * (2.0 * PI).ln()));
        let gauss = g.sub(e2, log_std);
        // ln(1 − tanh²u) = 2(ln 2 − u − softplus(−2u)).
        let m2u = g.scale(u, -2.0);
        let sp = g.softplus(m2u);
        let usp = g.add(u, sp);
        let neg = g.scale(usp, -2.0);
        let jac = g.add_scalar(neg, 2.0 * LN_2);
        let lp = g.sub(gauss, jac);
        let log_prob = g.sum_cols(lp);
        PolicyOut { action, log_prob }
    }

    /// Action in `[−1, 1]^m`; the squashed mean when `deterministic`.
    pub fn act(&self, x: &[f64], deterministic: bool, rng: &mut impl Rng) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let p = self.actor_store.bind_frozen(&mut g);
        let obs = g.constant(Tensor::matrix(1, self.input_dim, x.to_vec()));
        let eps = if deterministic {
            Tensor::zeros(&[1, self.m])
        } else {
            Tensor::matrix(1, self.m, (0..self.m).map(|_| rng.sample(StandardNormal)).collect())
        };
        let out = self.policy(&mut g, &p, obs, &eps);
        Ok(g.value(out.action).data().to_vec())
    }

    /// Soft TD targets `r + γ(1 − done)(min Q̄(s', a') − α log π(a'|s'))`.
    pub fn td_targets(&self, b: &SacBatch, eps_next: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let pa = self.actor_store.bind_frozen(&mut g);
        let pt = self.target_store.bind_frozen(&mut g);
        let next = g.constant(b.next_obs.clone());
        let out = self.policy(&mut g, &pa, next, eps_next);
        let (t1, t2) = self.critics.eval(&mut g, &pt, next, out.action);
        let q = g.min(t1, t2);
        let alpha = self.temperature();
        let lp = g.value(out.log_prob);
        let q = g.value(q);
        let y = (0..b.len())
            .map(|i| {
                let soft = q.at(i, 0) - alpha * lp.at(i, 0);
                b.rew.at(i, 0) + self.cfg.discount * (1.0 - b.done.at(i, 0)) * soft
            })
            .collect();
        Tensor::matrix(b.len(), 1, y)
    }

    /// Twin-critic squared error against fixed targets, on a fresh graph
    /// with the critic parameters bound as leaves.
    pub fn critic_objective(&self, store: &ParamStore, b: &SacBatch, targets: &Tensor) -> (Graph, Bound, Var, Var) {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let obs = g.constant(b.obs.clone());
        let act = g.constant(b.act.clone());
        let (q1, q2) = self.critics.eval(&mut g, &p, obs, act);
        let y = g.constant(targets.clone());
        let d1 = g.sub(q1, y);
        let d2 = g.sub(q2, y);
        let s1 = g.square(d1);
        let s2 = g.square(d2);
        let l1 = g.mean(s1);
        let l2 = g.mean(s2);
        let loss = g.add(l1, l2);
        let qm = g.add(q1, q2);
        let q_mean = g.mean(qm);
        (g, p, loss, q_mean)
    }

    /// `mean(α log π(a|s) − min Q(s, a))` with `a` reparameterized by `eps`,
    /// actor parameters as leaves.
    pub fn actor_objective(&self, store: &ParamStore, b: &SacBatch, eps: &Tensor) -> (Graph, Bound, Var, Var) {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let pc = self.critic_store.bind_frozen(&mut g);
        let obs = g.constant(b.obs.clone());
        let out = self.policy(&mut g, &p, obs, eps);
        let (q1, q2) = self.critics.eval(&mut g, &pc, obs, out.action);
        let q = g.min(q1, q2);
        let scaled = g.scale(out.log_prob, self.temperature());
        let diff = g.sub(scaled, q);
        let loss = g.mean(diff);
        (g, p, loss, out.log_prob)
    }

    /// One update of critics, actor and temperature, then Polyak tracking.
    pub fn update(&mut self, b: &SacBatch, rng: &mut impl Rng) -> Result<SacReport> {
        self.check_batch(b)?;
        let n = b.len();
        let mut draw = || Tensor::matrix(n, self.m, (0..n * self.m).map(|_| rng.sample(StandardNormal)).collect());
        let eps_next = draw();
        let eps = draw();

        let targets = self.td_targets(b, &eps_next);
        let (g, p, closs, q_mean) = self.critic_objective(&self.critic_store, b, &targets);
        let critic_loss = g.item(closs);
        if !critic_loss.is_finite() {
            return Err(Error::numerical(format!("critic loss diverged: {critic_loss}")));
        }
        let q_mean = g.item(q_mean) / 2.0;
        let grads = g.grad(closs, p.vars())?;
        let ids: Vec<_> = self.critic_store.ids().collect();
        self.critic_opt.step(&mut self.critic_store, &ids, &grads)?;

        let (g, p, aloss, log_prob) = self.actor_objective(&self.actor_store, b, &eps);
        let actor_loss = g.item(aloss);
        if !actor_loss.is_finite() {
            return Err(Error::numerical(format!("actor loss diverged: {actor_loss}")));
        }
        let mean_lp = g.value(log_prob).sum() / n as f64;
        let grads = g.grad(aloss, p.vars())?;
        let ids: Vec<_> = self.actor_store.ids().collect();
        self.actor_opt.step(&mut self.actor_store, &ids, &grads)?;

        if let Temperature::Learned { .. } = self.cfg.temperature {
            // d/d(log α) of −log α · (log π + H̄).
            let grad = Tensor::scalar(-(mean_lp + self.target_entropy()));
            let ids: Vec<_> = self.temp_param.ids().collect();
            self.temp_opt.step(&mut self.temp_param, &ids, &[grad])?;
            self.log_temp = self.temp_param.get(ids[0]).item();
        }
        self.target_store.polyak_from(&self.critic_store, self.cfg.polyak);
        Ok(SacReport {
            critic_loss,
            actor_loss,
            temperature: self.temperature(),
            entropy: -mean_lp,
            q_mean,
            target_mean: targets.sum() / n as f64,
        })
    }

    fn header(&self) -> Vec<u64> {
        [self.input_dim, self.m, self.cfg.hidden, self.cfg.layers].iter().map(|&v| v as u64).collect()
    }

    pub fn to_sections(&self) -> Vec<Section> {
        vec![
            Section::from_store("sac.actor", self.header(), &self.actor_store),
            Section::from_store("sac.critic", self.header(), &self.critic_store),
            Section::from_store("sac.target", self.header(), &self.target_store),
            Section::from_store("sac.temperature", self.header(), &self.temp_param),
        ]
    }

    /// Restores parameters into a learner built with the same shape.
    pub fn load_sections(&mut self, sections: &[Section]) -> Result<()> {
        for tag in ["sac.actor", "sac.critic", "sac.target", "sac.temperature"] {
            let s = find(sections, tag)?;
            if s.header != self.header() {
                return Err(Error::Checkpoint(format!("{tag} header {:?} does not match {:?}", s.header, self.header())));
            }
        }
        find(sections, "sac.actor")?.load_into(&mut self.actor_store)?;
        find(sections, "sac.critic")?.load_into(&mut self.critic_store)?;
        find(sections, "sac.target")?.load_into(&mut self.target_store)?;
        find(sections, "sac.temperature")?.load_into(&mut self.temp_param)?;
        if let Temperature::Learned { .. } = self.cfg.temperature {
            self.log_temp = self.temp_param.get(self.temp_param.ids().next().expect("one parameter")).item();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, inp: usize, m: usize, rng: &mut ChaCha8Rng) -> SacBatch {
        let mut row = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let obs = (0..n).map(|_| row(inp)).collect();
        let act = (0..n).map(|_| row(m)).collect();
        let next = (0..n).map(|_| row(inp)).collect();
        let rew = row(n);
        let done = (0..n).map(|i| i % 3 == 0).collect();
        SacBatch::new(obs, act, rew, next, done).unwrap()
    }

    #[test]
    fn actions_stay_in_range_and_mean_is_repeatable() {
        let cfg = SacConfig { init_scale: 1.0, ..SacConfig::default() };
        let sac = Sac::new(3, 2, &cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let a = sac.act(&x, false, &mut rng).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let x = [0.1, 0.2, 0.3];
        assert_eq!(sac.act(&x, true, &mut rng).unwrap(), sac.act(&x, true, &mut rng).unwrap());
        assert!(matches!(sac.act(&[0.0; 4], true, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_actor_has_zero_mean_action() {
        let mut sac = Sac::new(2, 1, &SacConfig::default(), 1).unwrap();
        for id in sac.actor_store.ids().collect::<Vec<_>>() {
            sac.actor_store.get_mut(id).data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sac.act(&[0.4, -2.0], true, &mut rng).unwrap(), vec![0.0]);
    }

    #[test]
    fn full_polyak_copies_critics() {
        let cfg = SacConfig { polyak: 1.0, ..SacConfig::default() };
        let mut sac = Sac::new(2, 1, &cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_batch(16, 2, 1, &mut rng);
        sac.update(&b, &mut rng).unwrap();
        assert_eq!(sac.target_store, sac.critic_store);
    }

    #[test]
    fn identical_critics_stay_identical() {
        let mut sac = Sac::new(2, 1, &SacConfig::default(), 3).unwrap();
        let q1: Vec<_> = sac.critics.q1.layers.iter().flat_map(|l| [l.w, l.b]).collect();
        let q2: Vec<_> = sac.critics.q2.layers.iter().flat_map(|l| [l.w, l.b]).collect();
        for (a, b) in q1.iter().zip(&q2) {
            let v = sac.critic_store.get(*a).clone();
            *sac.critic_store.get_mut(*b) = v;
        }
        sac.target_store = sac.critic_store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let b = random_batch(8, 2, 1, &mut rng);
            sac.update(&b, &mut rng).unwrap();
        }
        for (a, b) in q1.iter().zip(&q2) {
            assert_eq!(sac.critic_store.get(*a), sac.critic_store.get(*b));
        }
    }

    #[test]
    fn temperature_stays_positive() {
        let mut sac = Sac::new(2, 1, &SacConfig::default(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let b = random_batch(8, 2, 1, &mut rng);
            let r = sac.update(&b, &mut rng).unwrap();
            assert!(r.temperature > 0.0);
        }
        let bad = random_batch(4, 3, 1, &mut rng);
        assert!(matches!(sac.update(&bad, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut sac = Sac::new(2, 1, &SacConfig::default(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_batch(8, 2, 1, &mut rng);
        sac.update(&b, &mut rng).unwrap();
        let secs = sac.to_sections();
        let mut fresh = Sac::new(2, 1, &SacConfig::default(), 6).unwrap();
        fresh.load_sections(&secs).unwrap();
        assert_eq!(fresh.actor_store, sac.actor_store);
        assert_eq!(fresh.temperature(), sac.temperature());
        let mut wrong = Sac::new(3, 1, &SacConfig::default(), 6).unwrap();
        assert!(wrong.load_sections(&secs).is_err());
    }
}

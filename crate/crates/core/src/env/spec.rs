use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::change::{ChangeFn, Schedule};
use crate::error::{Error, Result};
use crate::graph::{random_fnmdp_graph, Dims, FnMdpGraph};
use crate::rng::substream;

/// How a change-factor block evolves over the lifetime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaProcess {
    /// `θ_k = fns[k](schedule index)`.
    Scheduled { schedule: Schedule, fns: Vec<ChangeFn> },
    /// `θ_t = W θ_{t−1} + bias + noise·ε`, one transition per lifetime step.
    Markov { weights: Vec<Vec<f64>>, bias: Vec<f64>, noise: f64 },
}

impl ThetaProcess {
    pub fn dim(&self) -> usize {
        match self {
            ThetaProcess::Scheduled { fns, .. } => fns.len(),
            ThetaProcess::Markov { bias, .. } => bias.len(),
        }
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        match self {
            ThetaProcess::Scheduled { schedule, .. } => Some(schedule),
            ThetaProcess::Markov { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.schedule().is_some_and(Schedule::is_discrete)
    }

    /// Scheduled value at a clock reading; `None` for Markov processes.
    pub fn scheduled_value(&self, t_tilde: u64, episode: u64, t: usize) -> Option<Vec<f64>> {
        match self {
            ThetaProcess::Scheduled { schedule, fns } => {
                let i = schedule.index(t_tilde, episode, t);
                Some(fns.iter().map(|f| f.value(i)).collect())
            }
            ThetaProcess::Markov { .. } => None,
        }
    }

    fn validate(&self, mask: &[Vec<bool>], dim: usize, name: &str) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::contract(format!("{name} process has dim {}, graph says {dim}", self.dim())));
        }
        match self {
            ThetaProcess::Scheduled { schedule, .. } => schedule.validate(),
            ThetaProcess::Markov { weights, .. } => check_masked(weights, mask, &format!("{name} weights")),
        }
    }
}

/// One-hidden-layer tanh net over a masked parent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedNet {
    /// `hidden × inputs`
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MaskedNet {
    pub fn eval(&self, x: &[f64], mask: &[bool]) -> f64 {
        let mut out = self.b2;
        for (row, (b, w)) in self.w1.iter().zip(self.b1.iter().zip(&self.w2)) {
            let z: f64 = row.iter().zip(x.iter().zip(mask)).map(|(wi, (xi, &m))| if m { wi * xi } else { 0.0 }).sum();
            out += w * (z + b).tanh();
        }
        out
    }

    fn random(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        let w1 = (0..hidden).map(|_| (0..inputs).map(|_| n()).collect()).collect();
        let b1 = (0..hidden).map(|_| 0.1 * n()).collect();
        let w2 = (0..hidden).map(|_| n() / (hidden as f64).sqrt()).collect();
        Self { w1, b1, w2, b2: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// `s'_i = Σ_j w_ss[i][j] s_j + Σ_k w_as[i][k] a_k + Σ_l w_ts[i][l] θˢ_l + bias_i + noise·ε`;
    /// weights vanish wherever the mask does.
    Linear { w_ss: Vec<Vec<f64>>, w_as: Vec<Vec<f64>>, w_ts: Vec<Vec<f64>>, bias: Vec<f64>, noise: f64 },
    /// One net per state dimension over the masked `(s, a, θˢ)`.
    Mlp { nets: Vec<MaskedNet>, noise: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reward {
    Linear { w_s: Vec<f64>, w_a: Vec<f64>, w_t: Vec<f64>, bias: f64, noise: f64 },
    /// Net over the masked `(s, a)` and all of `θʳ`.
    Mlp { net: MaskedNet, noise: f64 },
    /// `−|s[velocity] − θʳ_0| − action_cost·‖a‖₂ + noise·ε`.
    Tracking { velocity: usize, action_cost: f64, noise: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub graph: FnMdpGraph,
    pub dynamics: Dynamics,
    pub reward: Reward,
    pub theta_s: ThetaProcess,
    pub theta_r: ThetaProcess,
    pub horizon: usize,
    /// Standard deviation of the initial state.
    pub init_scale: f64,
    /// Zero one seeded-random action column per episode in the dynamics.
    pub mechanism_change: bool,
}

fn check_masked(w: &[Vec<f64>], mask: &[Vec<bool>], name: &str) -> Result<()> {
    if w.len() != mask.len() || w.iter().zip(mask).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::contract(format!("{name} shape does not match its mask")));
    }
    for (wr, mr) in w.iter().zip(mask) {
        for (&x, &m) in wr.iter().zip(mr) {
            if !m && x != 0.0 {
                return Err(Error::contract(format!("{name} has weight {x} on a masked-out edge")));
            }
        }
    }
    Ok(())
}

impl EnvSpec {
    pub fn dims(&self) -> Dims {
        self.graph.dims
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.graph;
        g.validate()?;
        let Dims { d, m, p, q } = g.dims;
        if self.horizon < 2 {
            return Err(Error::contract("horizon must be at least 2"));
        }
        match &self.dynamics {
            Dynamics::Linear { w_ss, w_as, w_ts, bias, .. } => {
                check_masked(w_ss, &g.css, "w_ss")?;
                check_masked(w_as, &g.cas, "w_as")?;
                check_masked(w_ts, &g.cts, "w_ts")?;
                if bias.len() != d {
                    return Err(Error::contract("dynamics bias length"));
                }
            }
            Dynamics::Mlp { nets, .. } => {
                if nets.len() != d || nets.iter().any(|n| n.w1.iter().any(|r| r.len() != d + m + p)) {
                    return Err(Error::contract("dynamics nets must be one per state over d+m+p inputs"));
                }
            }
        }
        match &self.reward {
            Reward::Linear { w_s, w_a, w_t, .. } => {
                check_masked(std::slice::from_ref(w_s), std::slice::from_ref(&g.csr), "reward w_s")?;
                check_masked(std::slice::from_ref(w_a), std::slice::from_ref(&g.car), "reward w_a")?;
                if w_t.len() != q {
                    return Err(Error::contract("reward w_t length"));
                }
            }
            Reward::Mlp { net, .. } => {
                if net.w1.iter().any(|r| r.len() != d + m + q) {
                    return Err(Error::contract("reward net must take d+m+q inputs"));
                }
            }
            Reward::Tracking { velocity, .. } => {
                let expect: Vec<bool> = (0..d).map(|i| i == *velocity).collect();
                if g.csr != expect || g.car.iter().any(|&x| !x) || q == 0 {
                    return Err(Error::contract("tracking reward needs csr = e_velocity, car = 1, q ≥ 1"));
                }
            }
        }
        self.theta_s.validate(&g.ctt_s, p, "theta_s")?;
        self.theta_r.validate(&g.ctt_r, q, "theta_r")?;
        Ok(())
    }

    /// Noise-free next state from `(s, a, θˢ)`.
    pub fn transition_mean(&self, s: &[f64], a: &[f64], theta_s: &[f64]) -> Vec<f64> {
        let g = &self.graph;
        match &self.dynamics {
            Dynamics::Linear { w_ss, w_as, w_ts, bias, .. } => (0..g.dims.d)
                .map(|i| {
                    dot(&w_ss[i], s) + dot(&w_as[i], a) + dot(&w_ts[i], theta_s) + bias[i]
                })
                .collect(),
            Dynamics::Mlp { nets, .. } => {
                let x: Vec<f64> = s.iter().chain(a).chain(theta_s).copied().collect();
                (0..g.dims.d)
                    .map(|i| {
                        let mask: Vec<bool> =
                            g.css[i].iter().chain(&g.cas[i]).chain(&g.cts[i]).copied().collect();
                        nets[i].eval(&x, &mask)
                    })
                    .collect()
            }
        }
    }

    pub fn transition_noise(&self) -> f64 {
        match &self.dynamics {
            Dynamics::Linear { noise, .. } | Dynamics::Mlp { noise, .. } => *noise,
        }
    }

    /// Noise-free reward from `(s, a, θʳ)`.
    pub fn reward_mean(&self, s: &[f64], a: &[f64], theta_r: &[f64]) -> f64 {
        let g = &self.graph;
        match &self.reward {
            Reward::Linear { w_s, w_a, w_t, bias, .. } => dot(w_s, s) + dot(w_a, a) + dot(w_t, theta_r) + bias,
            Reward::Mlp { net, .. } => {
                let x: Vec<f64> = s.iter().chain(a).chain(theta_r).copied().collect();
                let mask: Vec<bool> =
                    g.csr.iter().chain(&g.car).copied().chain(std::iter::repeat_n(true, theta_r.len())).collect();
                net.eval(&x, &mask)
            }
            Reward::Tracking { velocity, action_cost, .. } => {
                let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                -(s[*velocity] - theta_r[0]).abs() - action_cost * norm
            }
        }
    }

    pub fn reward_noise(&self) -> f64 {
        match &self.reward {
            Reward::Linear { noise, .. } | Reward::Mlp { noise, .. } | Reward::Tracking { noise, .. } => *noise,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Settings for the 1-D velocity-tracking environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub horizon: usize,
    /// Velocity persistence per step.
    pub decay: f64,
    /// Velocity response to the action.
    pub gain: f64,
    /// Velocity response to the wind-like factor θˢ.
    pub wind_gain: f64,
    pub noise: f64,
    pub reward_noise: f64,
    pub action_cost: f64,
    pub wind: ThetaProcess,
    pub target: ThetaProcess,
    pub mechanism_change: bool,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            decay: 0.8,
            gain: 0.7,
            wind_gain: 0.01,
            noise: 0.02,
            reward_noise: 0.0,
            action_cost: 0.05,
            wind: ThetaProcess::Scheduled { schedule: Schedule::AcrossEpisode, fns: vec![ChangeFn::Constant { c: 0.0 }] },
            target: ThetaProcess::Scheduled {
                schedule: Schedule::AcrossEpisode,
                fns: vec![ChangeFn::Sine { offset: 1.5, amp: 1.5, freq: 0.2 }],
            },
            mechanism_change: false,
        }
    }
}

/// Position/velocity tracking task: `x' = x + 0.1·v`,
/// `v' = decay·v + gain·a + wind_gain·θˢ`, reward `−|v − θʳ| − cost·|a|`.
pub fn make_tracking_env(cfg: &TrackingConfig) -> Result<EnvSpec> {
    let dims = Dims { d: 2, m: 1, p: 1, q: 1 };
    let graph = FnMdpGraph {
        dims,
        css: vec![vec![true, true], vec![false, true]],
        cas: vec![vec![false], vec![true]],
        cts: vec![vec![false], vec![true]],
        csr: vec![false, true],
        car: vec![true],
        ctt_s: vec![vec![true]],
        ctt_r: vec![vec![true]],
    };
    let spec = EnvSpec {
        graph,
        dynamics: Dynamics::Linear {
            w_ss: vec![vec![1.0, 0.1], vec![0.0, cfg.decay]],
            w_as: vec![vec![0.0], vec![cfg.gain]],
            w_ts: vec![vec![0.0], vec![cfg.wind_gain]],
            bias: vec![0.0, 0.0],
            noise: cfg.noise,
        },
        reward: Reward::Tracking { velocity: 1, action_cost: cfg.action_cost, noise: cfg.reward_noise },
        theta_s: cfg.wind.clone(),
        theta_r: cfg.target.clone(),
        horizon: cfg.horizon,
        init_scale: 0.1,
        mechanism_change: cfg.mechanism_change,
    };
    spec.validate()?;
    Ok(spec)
}

/// Change-factor behaviour of a random bench.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchTheta {
    /// Masked linear-Gaussian Markov chains for both blocks.
    Markov { noise: f64 },
    /// Continuous sinusoids at the listed frequencies; θʳ is held constant
    /// when `stationary_reward`.
    Sines { freqs: Vec<f64>, stationary_reward: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub dims: Dims,
    pub density: f64,
    pub noise: f64,
    pub horizon: usize,
    pub mlp: bool,
    pub theta: BenchTheta,
}

impl BenchConfig {
    pub fn linear(seed: u64, theta: BenchTheta) -> Self {
        Self {
            seed,
            dims: Dims { d: 4, m: 1, p: 2, q: 1 },
            density: 0.4,
            noise: 0.3,
            horizon: 50,
            mlp: false,
            theta,
        }
    }
}

fn signed_weight(rng: &mut impl Rng) -> f64 {
    let w = rng.random_range(0.5..1.0);
    if rng.random_bool(0.5) {
        w
    } else {
        -w
    }
}

fn masked_weights(mask: &[Vec<bool>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    mask.iter()
        .map(|row| row.iter().map(|&m| if m { signed_weight(rng) } else { 0.0 }).collect())
        .collect()
}

/// Scales rows so every absolute row sum is at most `limit`.
fn contract_rows(w: &mut [Vec<f64>], limit: f64) {
    let worst = w.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if worst > limit {
        let k = limit / worst;
        w.iter_mut().flatten().for_each(|x| *x *= k);
    }
}

/// Random FN-MDP over a random graph, with stable dynamics.
pub fn random_bench_env(cfg: &BenchConfig) -> Result<EnvSpec> {
    let graph = random_fnmdp_graph(cfg.seed, cfg.dims, cfg.density)?;
    let Dims { d, m, p, q } = cfg.dims;
    let mut rng = substream(cfg.seed, "bench-weights");
    let dynamics = if cfg.mlp {
        let nets = (0..d).map(|_| MaskedNet::random(d + m + p, 8, &mut rng)).collect();
        Dynamics::Mlp { nets, noise: cfg.noise }
    } else {
        let mut w_ss = masked_weights(&graph.css, &mut rng);
        contract_rows(&mut w_ss, 0.9);
        Dynamics::Linear {
            w_ss,
            w_as: masked_weights(&graph.cas, &mut rng),
            w_ts: masked_weights(&graph.cts, &mut rng),
            bias: vec![0.0; d],
            noise: cfg.noise,
        }
    };
    let reward = if cfg.mlp {
        Reward::Mlp { net: MaskedNet::random(d + m + q, 8, &mut rng), noise: cfg.noise }
    } else {
        let one = |mask: &[bool], rng: &mut _| masked_weights(&[mask.to_vec()], rng).remove(0);
        Reward::Linear {
            w_s: one(&graph.csr, &mut rng),
            w_a: one(&graph.car, &mut rng),
            w_t: (0..q).map(|_| signed_weight(&mut rng)).collect(),
            bias: 0.0,
            noise: cfg.noise,
        }
    };
    let (theta_s, theta_r) = match &cfg.theta {
        BenchTheta::Markov { noise } => {
            let mut markov = |mask: &[Vec<bool>], n: usize| {
                let mut w = masked_weights(mask, &mut rng);
                contract_rows(&mut w, 0.9);
                ThetaProcess::Markov { weights: w, bias: vec![0.0; n], noise: *noise }
            };
            (markov(&graph.ctt_s, p), markov(&graph.ctt_r, q))
        }
        BenchTheta::Sines { freqs, stationary_reward } => {
            if freqs.is_empty() {
                return Err(Error::contract("sine bench needs at least one frequency"));
            }
            let sine = |k: usize| ChangeFn::Sine { offset: 0.0, amp: 1.0, freq: freqs[k % freqs.len()] };
            let ts = ThetaProcess::Scheduled { schedule: Schedule::Continuous, fns: (0..p).map(sine).collect() };
            let fr = if *stationary_reward {
                (0..q).map(|_| ChangeFn::Constant { c: 0.5 }).collect()
            } else {
                (0..q).map(|l| sine(p + l)).collect()
            };
            (ts, ThetaProcess::Scheduled { schedule: Schedule::Continuous, fns: fr })
        }
    };
    let spec = EnvSpec {
        graph,
        dynamics,
        reward,
        theta_s,
        theta_r,
        horizon: cfg.horizon,
        init_scale: 0.1,
        mechanism_change: false,
    };
    spec.validate()?;
    Ok(spec)
}

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::spec::{EnvSpec, ThetaProcess};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub s: Vec<f64>,
    pub theta_s: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub t: usize,
    pub t_tilde: u64,
    pub episode: u64,
}

/// What one `step` returns.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_s: Vec<f64>,
    pub reward: f64,
    /// `t` reached the horizon; `reset` is due.
    pub done: bool,
}

/// Simulator for one [`EnvSpec`]; owns its state and RNG streams.
#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
    state: EnvState,
    noise_rng: ChaCha8Rng,
    theta_rng: ChaCha8Rng,
    started: bool,
    disabled_action: Option<usize>,
    clip_warnings: usize,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl Env {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let mut env = Self {
            state: EnvState {
                s: vec![0.0; dims.d],
                theta_s: vec![0.0; dims.p],
                theta_r: vec![0.0; dims.q],
                t: 0,
                t_tilde: 0,
                episode: 0,
                },
            noise_rng: substream(seed, "env-noise"),
            theta_rng: substream(seed, "env-theta"),
            spec,
            started: false,
            disabled_action: None,
            clip_warnings: 0,
        };
        env.init_markov();
        Ok(env)
    }

    /// Markov change factors start from a burned-in draw.
    fn init_markov(&mut self) {
        for block in [false, true] {
            let proc = if block { &self.spec.theta_r } else { &self.spec.theta_s };
            if let ThetaProcess::Markov { .. } = proc {
                let dim = proc.dim();
                let mut th: Vec<f64> = (0..dim).map(|_| normal(&mut self.theta_rng)).collect();
                for _ in 0..100 {
                    th = markov_step(proc, &th, &mut self.theta_rng);
                }
                if block {
                    self.state.theta_r = th;
                } else {
                    self.state.theta_s = th;
                }
            }
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn clip_warnings(&self) -> usize {
        self.clip_warnings
    }

    pub fn disabled_action(&self) -> Option<usize> {
        self.disabled_action
    }

    /// Starts the next episode (the first call starts episode 0) and returns s₀.
    pub fn reset(&mut self) -> Vec<f64> {
        if self.started {
            self.state.episode += 1;
        }
        self.started = true;
        let h = self.spec.horizon as u64;
        self.state.t = 0;
        self.state.t_tilde = self.state.episode * h;
        let scale = self.spec.init_scale;
        self.state.s = (0..self.spec.dims().d).map(|_| scale * normal(&mut self.noise_rng)).collect();
        self.refresh_scheduled();
        if self.spec.mechanism_change && self.spec.dims().m > 0 {
            self.disabled_action = Some(self.noise_rng.random_range(0..self.spec.dims().m));
        }
        self.state.s.clone()
    }

    fn refresh_scheduled(&mut self) {
        let EnvState { t_tilde, episode, t, .. } = self.state;
        if let Some(v) = self.spec.theta_s.scheduled_value(t_tilde, episode, t) {
            self.state.theta_s = v;
        }
        if let Some(v) = self.spec.theta_r.scheduled_value(t_tilde, episode, t) {
            self.state.theta_r = v;
        }
    }

    /// Applies `a`: emits `r_t = h(s_t, a_t, θʳ_t)`, advances the change
    /// factors one lifetime step, then draws `s_{t+1} = f(s_t, a_t, θˢ_{t+1})`.
    pub fn step(&mut self, a: &[f64]) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::contract("step before the first reset"));
        }
        let h = self.spec.horizon;
        if self.state.t >= h {
            return Err(Error::EpisodeOverrun { t: self.state.t, horizon: h });
        }
        let dims = self.spec.dims();
        if a.len() != dims.m {
            return Err(Error::contract(format!("action has {} entries, expected {}", a.len(), dims.m)));
        }
        let mut act: Vec<f64> = a.to_vec();
        for x in &mut act {
            if !x.is_finite() {
                return Err(Error::numerical("non-finite action"));
            }
            if x.abs() > 1.0 {
                *x = x.clamp(-1.0, 1.0);
                self.clip_warnings += 1;
            }
        }
        let r_noise = self.spec.reward_noise();
        let reward = self.spec.reward_mean(&self.state.s, &act, &self.state.theta_r)
            + if r_noise > 0.0 { r_noise * normal(&mut self.noise_rng) } else { 0.0 };

        self.state.t += 1;
        self.state.t_tilde += 1;
        self.advance_theta();

        let mut dyn_a = act;
        if let Some(k) = self.disabled_action {
            dyn_a[k] = 0.0;
        }
        let sigma = self.spec.transition_noise();
        let mut next = self.spec.transition_mean(&self.state.s, &dyn_a, &self.state.theta_s);
        if sigma > 0.0 {
            for x in &mut next {
                *x += sigma * normal(&mut self.noise_rng);
            }
        }
        self.state.s = next.clone();
        Ok(StepOutcome { next_s: next, reward, done: self.state.t >= h })
    }

    fn advance_theta(&mut self) {
        self.refresh_scheduled();
        if matches!(self.spec.theta_s, ThetaProcess::Markov { .. }) {
            self.state.theta_s = markov_step(&self.spec.theta_s, &self.state.theta_s, &mut self.theta_rng);
        }
        if matches!(self.spec.theta_r, ThetaProcess::Markov { .. }) {
            self.state.theta_r = markov_step(&self.spec.theta_r, &self.state.theta_r, &mut self.theta_rng);
        }
    }

    /// Runs one full episode under `policy`.
    pub fn rollout<P: Policy + ?Sized>(&mut self, policy: &mut P, record_theta: bool) -> Result<Trajectory> {
        let mut s = self.reset();
        let mut steps = Vec::with_capacity(self.spec.horizon);
        loop {
            let st = self.state.clone();
            let a = policy.act(&s, &st);
            let out = self.step(&a)?;
            let applied: Vec<f64> = a.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
            steps.push(StepRecord {
                t_tilde: st.t_tilde,
                episode: st.episode,
                t: st.t,
                s,
                a: applied,
                r: out.reward,
                theta_s: if record_theta { st.theta_s } else { Vec::new() },
                theta_r: if record_theta { st.theta_r } else { Vec::new() },
            });
            s = out.next_s;
            if out.done {
                break;
            }
        }
        Ok(Trajectory { steps, final_s: s })
    }
}

fn markov_step(proc: &ThetaProcess, th: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    match proc {
        ThetaProcess::Markov { weights, bias, noise } => weights
            .iter()
            .zip(bias)
            .map(|(row, b)| {
                row.iter().zip(th).map(|(w, x)| w * x).sum::<f64>() + b + noise * normal(rng)
            })
            .collect(),
        ThetaProcess::Scheduled { .. } => th.to_vec(),
    }
}

/// Chooses actions from the current observation and clock.
pub trait Policy {
    fn act(&mut self, s: &[f64], state: &EnvState) -> Vec<f64>;
}

impl<F: FnMut(&[f64], &EnvState) -> Vec<f64>> Policy for F {
    fn act(&mut self, s: &[f64], state: &EnvState) -> Vec<f64> {
        self(s, state)
    }
}

/// Independent uniform actions on `[-1, 1]^m`.
pub struct UniformPolicy {
    pub m: usize,
    pub rng: ChaCha8Rng,
}

impl UniformPolicy {
    pub fn new(m: usize, seed: u64) -> Self {
        Self { m, rng: substream(seed, "uniform-policy") }
    }
}

impl Policy for UniformPolicy {
    fn act(&mut self, _s: &[f64], _state: &EnvState) -> Vec<f64> {
        (0..self.m).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }
}

/// One simulator step as recorded in a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t_tilde: u64,
    pub episode: u64,
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub theta_s: Vec<f64>,
    pub theta_r: Vec<f64>,
}

/// One episode. `final_s` is the state after the last action.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub final_s: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn has_theta(&self) -> bool {
        self.steps.first().is_some_and(|s| !s.theta_s.is_empty() || !s.theta_r.is_empty())
    }

    /// State following step `i`.
    pub fn next_state(&self, i: usize) -> &[f64] {
        if i + 1 < self.steps.len() {
            &self.steps[i + 1].s
        } else {
            &self.final_s
        }
    }
}

/// `n_episodes` consecutive episodes from a fresh simulator.
pub fn collect_trajectories<P: Policy + ?Sized>(
    spec: &EnvSpec,
    seed: u64,
    policy: &mut P,
    n_episodes: usize,
    record_theta: bool,
) -> Result<Vec<Trajectory>> {
    let mut env = Env::new(spec.clone(), seed)?;
    (0..n_episodes).map(|_| env.rollout(policy, record_theta)).collect()
}

/// One JSON object per step.
pub fn write_jsonl(trajs: &[Trajectory], mut w: impl Write) -> Result<()> {
    for tr in trajs {
        for st in &tr.steps {
            serde_json::to_writer(&mut w, st)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads steps back, splitting episodes on the episode field. Terminal
/// states are not part of the format, so `final_s` comes back empty.
pub fn read_jsonl(r: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let st: StepRecord = serde_json::from_str(&line)?;
        match out.last_mut() {
            Some(tr) if tr.steps.last().is_some_and(|p| p.episode == st.episode) => tr.steps.push(st),
            _ => out.push(Trajectory { steps: vec![st], final_s: Vec::new() }),
        }
    }
    Ok(out)
}

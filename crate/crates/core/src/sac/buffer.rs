//! FIFO replay buffer of transitions augmented with estimated change factors.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use crate::env::StepRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub theta_s: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub s_next: Vec<f64>,
    pub theta_s_next: Vec<f64>,
    pub theta_r_next: Vec<f64>,
    pub done: bool,
    pub t: usize,
    pub t_tilde: u64,
    pub episode: u64,
}

impl Transition {
    /// The observed part, as a trajectory step without true factors.
    pub fn step_record(&self) -> StepRecord {
        StepRecord {
            t_tilde: self.t_tilde,
            episode: self.episode,
            t: self.t,
            s: self.s.clone(),
            a: self.a.clone(),
            r: self.r,
            theta_s: vec![],
            theta_r: vec![],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    /// Length of the consecutive-t̃ run ending at each item, counted at push
    /// time (may reach past evicted items).
    runs: VecDeque<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self { capacity, items: VecDeque::new(), runs: VecDeque::new() })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, tr: Transition) {
        let run = match (self.items.back(), self.runs.back()) {
            (Some(prev), Some(&r)) if prev.t_tilde + 1 == tr.t_tilde => r + 1,
            _ => 1,
        };
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.runs.pop_front();
        }
        self.items.push_back(tr);
        self.runs.push_back(run);
    }

    /// `n` distinct transitions drawn uniformly.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if n == 0 || n > self.items.len() {
            return Err(Error::contract(format!("cannot sample {n} from a buffer of {}", self.items.len())));
        }
        Ok(sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect())
    }

    fn run_at(&self, i: usize) -> usize {
        self.runs[i].min(i + 1)
    }

    /// A uniformly chosen window of `k` records with consecutive t̃.
    pub fn contiguous(&self, k: usize, rng: &mut impl Rng) -> Result<Vec<StepRecord>> {
        if k == 0 {
            return Err(Error::contract("window length must be positive"));
        }
        let n = self.items.len();
        let pick = |end: usize| (end + 1 - k..=end).map(|i| self.items[i].step_record()).collect();
        if n >= k {
            for _ in 0..64 {
                let end = rng.random_range(k - 1..n);
                if self.run_at(end) >= k {
                    return Ok(pick(end));
                }
            }
            let ends: Vec<usize> = (k - 1..n).filter(|&i| self.run_at(i) >= k).collect();
            if !ends.is_empty() {
                return Ok(pick(ends[rng.random_range(0..ends.len())]));
            }
        }
        Err(Error::contract(format!("no run of {k} consecutive steps in the buffer")))
    }

    /// Longest run of consecutive t̃ currently held.
    pub fn longest_run(&self) -> usize {
        (0..self.items.len()).map(|i| self.run_at(i)).max().unwrap_or(0)
    }
}

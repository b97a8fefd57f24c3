use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form change function of a schedule index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChangeFn {
    Constant { c: f64 },
    /// `offset + amp·sin(freq·i)`
    Sine { offset: f64, amp: f64, freq: f64 },
    /// `offset + amp·base^(−⌈i/decay_block⌉)·sin(freq·i)`
    DampedSine { offset: f64, amp: f64, base: f64, decay_block: u64, freq: f64 },
    /// `offset + slope·|i − center|`
    PiecewiseLinear { offset: f64, slope: f64, center: f64 },
    /// `offset + amp·|cos(freq·i)|`
    AbsCosine { offset: f64, amp: f64, freq: f64 },
}

impl ChangeFn {
    pub fn value(&self, index: u64) -> f64 {
        let i = index as f64;
        match *self {
            ChangeFn::Constant { c } => c,
            ChangeFn::Sine { offset, amp, freq } => offset + amp * (freq * i).sin(),
            ChangeFn::DampedSine { offset, amp, base, decay_block, freq } => {
                let blocks = index.div_ceil(decay_block.max(1));
                offset + amp * base.powf(-(blocks as f64)) * (freq * i).sin()
            }
            ChangeFn::PiecewiseLinear { offset, slope, center } => offset + slope * (i - center).abs(),
            ChangeFn::AbsCosine { offset, amp, freq } => offset + amp * (freq * i).cos().abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ChangeFn::Constant { .. })
    }
}

/// How the change index is derived from the simulator clock.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Index is the lifetime step t̃.
    Continuous,
    /// Index is the episode number.
    AcrossEpisode,
    /// Index is `⌊t / period⌋` within each episode.
    WithinEpisode { period: usize },
    /// Index is the number of listed lifetime steps at or before t̃.
    ExplicitChangepoints { points: Vec<u64> },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::WithinEpisode { period: 0 } => Err(Error::contract("within-episode period must be ≥ 1")),
            Schedule::ExplicitChangepoints { points } if points.windows(2).any(|w| w[0] >= w[1]) => {
                Err(Error::contract("changepoints must be strictly increasing"))
            }
            _ => Ok(()),
        }
    }

    pub fn index(&self, t_tilde: u64, episode: u64, t: usize) -> u64 {
        match self {
            Schedule::Continuous => t_tilde,
            Schedule::AcrossEpisode => episode,
            Schedule::WithinEpisode { period } => (t / period) as u64,
            Schedule::ExplicitChangepoints { points } => points.partition_point(|&p| p <= t_tilde) as u64,
        }
    }

    /// Piecewise-constant schedules; θ only moves at changepoints.
    pub fn is_discrete(&self) -> bool {
        !matches!(self, Schedule::Continuous)
    }

    /// Lifetime steps in `[0, lifetime)` where the index differs from the
    /// previous step's.
    pub fn changepoints(&self, horizon: usize, lifetime: u64) -> Vec<u64> {
        let h = horizon as u64;
        let mut out = Vec::new();
        for tt in 1..lifetime {
            let prev = self.index(tt - 1, (tt - 1) / h, ((tt - 1) % h) as usize);
            let cur = self.index(tt, tt / h, (tt % h) as usize);
            if prev != cur {
                out.push(tt);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas_at_anchor_points() {
        assert_eq!(ChangeFn::Sine { offset: 10.0, amp: 10.0, freq: 0.005 }.value(0), 10.0);
        assert_eq!(ChangeFn::PiecewiseLinear { offset: 5.0, slope: 0.02, center: 1500.0 }.value(1500), 5.0);
        assert_eq!(ChangeFn::Sine { offset: 1.5, amp: 1.5, freq: 0.2 }.value(0), 1.5);
        let d = ChangeFn::DampedSine { offset: 10.0, amp: 3.0, base: 1.01, decay_block: 10, freq: 0.5 };
        assert!((d.value(11) - (10.0 + 3.0 * 1.01f64.powi(-2) * 5.5f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn schedule_indices() {
        assert_eq!(Schedule::Continuous.index(123, 2, 23), 123);
        assert_eq!(Schedule::AcrossEpisode.index(123, 2, 23), 2);
        assert_eq!(Schedule::WithinEpisode { period: 10 }.index(123, 2, 23), 2);
        let e = Schedule::ExplicitChangepoints { points: vec![5, 9] };
        assert_eq!((e.index(4, 0, 4), e.index(5, 0, 5), e.index(100, 0, 0)), (0, 1, 2));
        assert_eq!(e.changepoints(50, 20), vec![5, 9]);
        assert_eq!(Schedule::AcrossEpisode.changepoints(10, 30), vec![10, 20]);
        assert!(Schedule::ExplicitChangepoints { points: vec![3, 3] }.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::FnMdpGraph;

/// Dimensions with a directed path to a present or future reward.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactRep {
    pub state: Vec<usize>,
    pub theta_s: Vec<usize>,
    pub theta_r: Vec<usize>,
}

impl CompactRep {
    pub fn theta_len(&self) -> usize {
        self.theta_s.len() + self.theta_r.len()
    }

    /// Policy input width `|s_min| + |θ_min|`.
    pub fn input_dim(&self) -> usize {
        self.state.len() + self.theta_len()
    }
}

/// Reverse reachability from the reward over the repeating slice template.
///
/// A state reaches the reward if it feeds it directly or feeds a state that
/// does; a θˢ dimension if it feeds a reaching state (within its slice) or a
/// reaching θˢ (next slice). Every θʳ dimension feeds the reward directly.
/// The sets only grow, so iterating to a fixed point terminates after at most
/// `d + p` rounds.
pub fn compact_representation(g: &FnMdpGraph) -> CompactRep {
    let (d, p, q) = (g.dims.d, g.dims.p, g.dims.q);
    let mut rs = g.csr.clone();
    let mut rt = vec![false; p];
    loop {
        let mut changed = false;
        for j in 0..d {
            if !rs[j] && (0..d).any(|i| rs[i] && g.css[i][j]) {
                rs[j] = true;
                changed = true;
            }
        }
        for k in 0..p {
            if !rt[k] && ((0..d).any(|i| rs[i] && g.cts[i][k]) || (0..p).any(|j| rt[j] && g.ctt_s[j][k])) {
                rt[k] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let idx = |v: &[bool]| v.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    CompactRep { state: idx(&rs), theta_s: idx(&rt), theta_r: (0..q).collect() }
}

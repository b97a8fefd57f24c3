use super::{Dag, Dims, FnMdpGraph};
use crate::error::{Error, Result};

/// Variable kind within one time slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    State(usize),
    Action(usize),
    Reward,
    ThetaS(usize),
    ThetaR(usize),
}

/// A graph unrolled over `horizon` slices.
///
/// Slice layout is `s_0..s_{d-1}, a_0..a_{m-1}, r, θˢ_0..θˢ_{p-1}, θʳ_0..θʳ_{q-1}`
/// and node `(kind, t)` has index `t·slice_len + offset(kind)`. The reward
/// node `r_t` is the reward of the transition out of slice `t−1`, so its
/// parents live in slice `t−1` and `θˢ_t → s_t` are the only within-slice
/// edges.
#[derive(Clone, Debug)]
pub struct UnrolledDbn {
    pub dims: Dims,
    pub horizon: usize,
    pub dag: Dag,
}

impl UnrolledDbn {
    pub fn new(g: &FnMdpGraph, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::contract(format!("unroll horizon {horizon} < 2")));
        }
        g.validate()?;
        let Dims { d, m, p, q } = g.dims;
        let mut u = Self { dims: g.dims, horizon, dag: Dag::new(0) };
        u.dag = Dag::new(horizon * u.slice_len());
        for t in 0..horizon {
            for i in 0..d {
                for k in 0..p {
                    if g.cts[i][k] {
                        u.dag.add_edge(u.node(NodeKind::ThetaS(k), t), u.node(NodeKind::State(i), t));
                    }
                }
            }
            if t == 0 {
                continue;
            }
            let prev = t - 1;
            for i in 0..d {
                for j in 0..d {
                    if g.css[i][j] {
                        u.dag.add_edge(u.node(NodeKind::State(j), prev), u.node(NodeKind::State(i), t));
                    }
                }
                for k in 0..m {
                    if g.cas[i][k] {
                        u.dag.add_edge(u.node(NodeKind::Action(k), prev), u.node(NodeKind::State(i), t));
                    }
                }
            }
            let r = u.node(NodeKind::Reward, t);
            for j in 0..d {
                if g.csr[j] {
                    u.dag.add_edge(u.node(NodeKind::State(j), prev), r);
                }
            }
            for k in 0..m {
                if g.car[k] {
                    u.dag.add_edge(u.node(NodeKind::Action(k), prev), r);
                }
            }
            for l in 0..q {
                u.dag.add_edge(u.node(NodeKind::ThetaR(l), prev), r);
            }
            for j in 0..p {
                for k in 0..p {
                    if g.ctt_s[j][k] {
                        u.dag.add_edge(u.node(NodeKind::ThetaS(k), prev), u.node(NodeKind::ThetaS(j), t));
                    }
                }
            }
            for j in 0..q {
                for k in 0..q {
                    if g.ctt_r[j][k] {
                        u.dag.add_edge(u.node(NodeKind::ThetaR(k), prev), u.node(NodeKind::ThetaR(j), t));
                    }
                }
            }
        }
        Ok(u)
    }

    pub fn slice_len(&self) -> usize {
        let Dims { d, m, p, q } = self.dims;
        d + m + p + q + 1
    }

    pub fn node_count(&self) -> usize {
        self.dag.len()
    }

    pub fn node(&self, kind: NodeKind, t: usize) -> usize {
        let Dims { d, m, p, .. } = self.dims;
        let off = match kind {
            NodeKind::State(i) => i,
            NodeKind::Action(j) => d + j,
            NodeKind::Reward => d + m,
            NodeKind::ThetaS(k) => d + m + 1 + k,
            NodeKind::ThetaR(l) => d + m + 1 + p + l,
        };
        t * self.slice_len() + off
    }

    pub fn label(&self, idx: usize) -> (NodeKind, usize) {
        let Dims { d, m, p, .. } = self.dims;
        let (t, off) = (idx / self.slice_len(), idx % self.slice_len());
        let kind = if off < d {
            NodeKind::State(off)
        } else if off < d + m {
            NodeKind::Action(off - d)
        } else if off == d + m {
            NodeKind::Reward
        } else if off < d + m + 1 + p {
            NodeKind::ThetaS(off - d - m - 1)
        } else {
            NodeKind::ThetaR(off - d - m - 1 - p)
        };
        (kind, t)
    }

    pub fn d_separated(&self, x: &[usize], y: &[usize], z: &[usize]) -> Result<bool> {
        self.dag.d_separated(x, y, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_and_labels() {
        let dims = Dims { d: 1, m: 1, p: 1, q: 1 };
        let u = UnrolledDbn::new(&FnMdpGraph::filled(dims, true), 2).unwrap();
        assert_eq!(u.node_count(), 10);
        for idx in 0..10 {
            let (k, t) = u.label(idx);
            assert_eq!(u.node(k, t), idx);
        }
        assert!(u.dag.is_acyclic());
        assert!(UnrolledDbn::new(&FnMdpGraph::filled(dims, true), 1).is_err());
    }

    #[test]
    fn empty_masks_leave_reward_edges() {
        let dims = Dims { d: 2, m: 1, p: 1, q: 2 };
        let u = UnrolledDbn::new(&FnMdpGraph::empty(dims), 4).unwrap();
        assert_eq!(u.dag.edge_count(), 3 * 2);
        for (a, b) in u.dag.edges() {
            assert!(matches!(u.label(a).0, NodeKind::ThetaR(_)));
            assert_eq!(u.label(b).0, NodeKind::Reward);
        }
    }

    #[test]
    fn actions_have_no_parents() {
        let dims = Dims { d: 2, m: 2, p: 1, q: 1 };
        let u = UnrolledDbn::new(&FnMdpGraph::filled(dims, true), 3).unwrap();
        for t in 0..3 {
            for j in 0..2 {
                assert!(u.dag.parents(u.node(NodeKind::Action(j), t)).is_empty());
            }
        }
    }
}

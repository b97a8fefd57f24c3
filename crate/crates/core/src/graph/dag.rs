use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Directed acyclic graph over nodes `0..n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dag {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new(n: usize) -> Self {
        Self { parents: vec![Vec::new(); n], children: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    /// Adds `u → v`. Duplicate edges are ignored. Acyclicity is the caller's
    /// responsibility; [`Dag::is_acyclic`] checks it.
    pub fn add_edge(&mut self, u: usize, v: usize) {
        if !self.children[u].contains(&v) {
            self.children[u].push(v);
            self.parents[v].push(u);
        }
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.children.iter().enumerate().flat_map(|(u, cs)| cs.iter().map(move |&v| (u, v)))
    }

    pub fn is_acyclic(&self) -> bool {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.len()).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in &self.children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        seen == self.len()
    }

    /// Nodes with a directed path into `targets`, the targets included.
    pub fn ancestors_of(&self, targets: &[usize]) -> Vec<bool> {
        let mut mark = vec![false; self.len()];
        let mut stack: Vec<usize> = targets.to_vec();
        while let Some(v) = stack.pop() {
            if !mark[v] {
                mark[v] = true;
                stack.extend_from_slice(&self.parents[v]);
            }
        }
        mark
    }

    /// Whether `x` and `y` are d-separated given `z`.
    ///
    /// Bayes-ball reachability: a ball moving up (entered from a child) passes
    /// through unobserved nodes in every direction; a ball moving down
    /// (entered from a parent) continues down through unobserved nodes and
    /// bounces back up at nodes with an observed descendant.
    pub fn d_separated(&self, x: &[usize], y: &[usize], z: &[usize]) -> Result<bool> {
        let n = self.len();
        let mut in_z = vec![false; n];
        for &v in z {
            check_node(v, n)?;
            in_z[v] = true;
        }
        let mut in_y = vec![false; n];
        for &v in y {
            check_node(v, n)?;
            if in_z[v] {
                return Err(Error::contract(format!("node {v} is in both Y and Z")));
            }
            in_y[v] = true;
        }
        for &v in x {
            check_node(v, n)?;
            if in_z[v] || in_y[v] {
                return Err(Error::contract(format!("node {v} is in X and another set")));
            }
        }
        let anc_z = self.ancestors_of(z);

        // visited[v][0]: arrived from a child (moving up); [1]: from a parent
        let mut visited = vec![[false; 2]; n];
        let mut queue: VecDeque<(usize, usize)> = x.iter().map(|&v| (v, 0)).collect();
        while let Some((v, dir)) = queue.pop_front() {
            if visited[v][dir] {
                continue;
            }
            visited[v][dir] = true;
            if !in_z[v] && in_y[v] {
                return Ok(false);
            }
            if dir == 0 {
                if !in_z[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
            } else {
                if !in_z[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, 1)));
                }
                if anc_z[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, 0)));
                }
            }
        }
        Ok(true)
    }
}

fn check_node(v: usize, n: usize) -> Result<()> {
    if v >= n {
        return Err(Error::contract(format!("node {v} out of range for {n} nodes")));
    }
    Ok(())
}

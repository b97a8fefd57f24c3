//! Named, group-tagged parameter storage.

use rand::Rng;

use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<String>,
    values: Vec<Tensor>,
}

/// Parameters of a store placed on a graph, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: &str, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.groups.push(group.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Xavier-uniform `[fan_in, fan_out]` matrix.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        group: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
        self.add(name, group, Tensor::matrix(fan_in, fan_out, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> &str {
        &self.groups[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_in_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.groups[id.0] == group)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Puts every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.values.iter().map(|t| g.param(t.clone())).collect() }
    }

    /// Puts every parameter on `g` as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound { vars: self.values.iter().map(|t| g.constant(t.clone())).collect() }
    }

    /// Puts only the parameters of the listed groups on `g` as constants.
    /// Ids of other groups resolve to a shared empty placeholder, so using
    /// them trips a shape assertion.
    pub fn bind_frozen_groups(&self, g: &mut Graph, groups: &[&str]) -> Bound {
        let placeholder = g.constant(Tensor::zeros(&[0]));
        let vars = self
            .values
            .iter()
            .zip(&self.groups)
            .map(|(t, grp)| if groups.contains(&grp.as_str()) { g.constant(t.clone()) } else { placeholder })
            .collect();
        Bound { vars }
    }

    /// All values flattened in id order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::contract(format!(
                "flat parameter vector has {} values, store holds {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut off = 0;
        for t in &mut self.values {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Replaces each value with `(1-tau)·self + tau·other`.
    pub fn polyak_from(&mut self, other: &ParamStore, tau: f64) {
        assert_eq!(self.len(), other.len(), "polyak over different stores");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = (1.0 - tau) * *x + tau * y;
            }
        }
    }

    /// `(name, shape, data)` triples for serialization.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, t)| (n.as_str(), t.shape(), t.data()))
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds_and_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let w = s.add_xavier("w", "a", 10, 20, &mut rng);
        s.add("b", "b", Tensor::zeros(&[20]));
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(s.get(w).data().iter().all(|v| v.abs() <= lim));
        assert_eq!(s.ids_in_group("b").count(), 1);
        let flat = s.flatten();
        let mut t = s.clone();
        t.load_flat(&flat).unwrap();
        assert_eq!(s, t);
        assert!(t.load_flat(&flat[1..]).is_err());
    }
}

//! Feed-forward and recurrent building blocks over a [`ParamStore`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamId, ParamStore};
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    XavierUniform,
    /// `scale · N(0, 1)` for weights and biases alike.
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let (w, b) = match init {
            Init::XavierUniform => (
                store.add_xavier(format!("{name}.w"), group, fan_in, fan_out, rng),
                store.add(format!("{name}.b"), group, Tensor::zeros(&[fan_out])),
            ),
            Init::Normal(scale) => {
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
                };
                let wd = draw(fan_in * fan_out);
                let bd = draw(fan_out);
                (
                    store.add(format!("{name}.w"), group, Tensor::matrix(fan_in, fan_out, wd)),
                    store.add(format!("{name}.b"), group, Tensor::vector(bd)),
                )
            }
        };
        Self { w, b, fan_in, fan_out }
    }

    /// `x · W + b` for `x` of shape `[n, fan_in]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let xw = g.matmul(x, p.var(self.w));
        g.add(xw, p.var(self.b))
    }
}

/// Multi-layer perceptron with a shared hidden activation and linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        sizes: &[usize],
        activation: Activation,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], init, rng))
            .collect();
        Self { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h);
            if i < last {
                h = self.activation.apply(g, h);
            }
        }
        h
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }
}

/// LSTM cell with gate order input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let wx = store.add_xavier(format!("{name}.wx"), group, input, 4 * hidden, rng);
        let wh = store.add_xavier(format!("{name}.wh"), group, hidden, 4 * hidden, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), group, Tensor::vector(bias));
        Self { wx, wh, b, input, hidden }
    }

    /// One step for a batch: `x` is `[n, input]`, `h` and `c` are `[n, hidden]`.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hs = self.hidden;
        let zx = g.matmul(x, p.var(self.wx));
        let zh = g.matmul(h, p.var(self.wh));
        let z = g.add(zx, zh);
        let z = g.add(z, p.var(self.b));
        let zi = g.slice_cols(z, 0, hs);
        let zf = g.slice_cols(z, hs, 2 * hs);
        let zg = g.slice_cols(z, 2 * hs, 3 * hs);
        let zo = g.slice_cols(z, 3 * hs, 4 * hs);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c);
        let ic = g.mul(i, cand);
        let c2 = g.add(fc, ic);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }

    /// Value-level step with dimension checks.
    pub fn step_values(
        &self,
        store: &ParamStore,
        x: &Tensor,
        h: &Tensor,
        c: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let ok = x.rank() == 2
            && h.rank() == 2
            && c.rank() == 2
            && x.cols() == self.input
            && h.cols() == self.hidden
            && c.shape() == h.shape()
            && x.rows() == h.rows();
        if !ok {
            return Err(Error::contract(format!(
                "lstm step: x {:?}, h {:?}, c {:?} for input {} hidden {}",
                x.shape(),
                h.shape(),
                c.shape(),
                self.input,
                self.hidden
            )));
        }
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let (h2, c2) = self.step(&mut g, &p, xv, hv, cv);
        Ok((g.value(h2).clone(), g.value(c2).clone()))
    }
}

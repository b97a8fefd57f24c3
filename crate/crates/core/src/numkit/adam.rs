//! Adam with bias correction.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// One Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "adam: {} params but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.t == 0 && state.m.is_empty() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    }
    if state.m.len() != params.len() {
        return Err(Error::contract("adam: state does not match parameters"));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`], keeping one state per parameter so groups may
/// be stepped on different schedules.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, states: Vec::new() }
    }

    /// Applies `grads` to the listed parameters.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], grads: &[Tensor]) -> Result<()> {
        if ids.len() != grads.len() {
            return Err(Error::contract("adam: ids and gradients differ in length"));
        }
        if self.states.len() < store.len() {
            self.states.resize(store.len(), AdamState::default());
        }
        for (id, g) in ids.iter().zip(grads) {
            let p = store.get_mut(*id);
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "adam: gradient shape {:?} for parameter of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            adam_step(
                p.data_mut(),
                g.data(),
                &mut self.states[id.0],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
            )?;
            if !p.is_finite() {
                return Err(Error::numerical(format!("parameter {} became non-finite", id.0)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0];
        let mut st = AdamState::default();
        adam_step(&mut p, &[0.0], &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p, vec![1.0]);
        assert_eq!(st.m, vec![0.0]);

        let mut st = AdamState { m: vec![0.5], v: vec![1.0], t: 3 };
        adam_step(&mut p, &[0.0], &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((st.m[0] - 0.45).abs() < 1e-15);
        assert!((st.v[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::default();
        adam_step(&mut p, &[3.0, -0.2], &mut st, 0.01, 0.9, 0.999, 1e-8).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![0.0];
        let mut st = AdamState::default();
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 5.0);
            adam_step(&mut x, &[g], &mut st, 0.05, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!((x[0] - 5.0).abs() < 1e-3, "x = {}", x[0]);
    }
}

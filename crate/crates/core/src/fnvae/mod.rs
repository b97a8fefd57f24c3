//! FN-VAE: learns the factored non-stationary generative model from
//! trajectories, with latent change factors inferred by LSTMs, Markov priors
//! over them, masked transition and reward decoders, and learnable masks.

pub mod infer;
pub mod loss;
pub mod model;
pub mod train;

use std::io::{Read, Write};

pub use infer::{cf_prior, infer_cf, CfBlock, CfFilter, CfStep};
pub use loss::{build_loss, compute_losses, compute_losses_discrete, Batch, ChangeMode, LossGraph, LossReport, LossWeights, SmoothnessVariant};
pub use model::{ArchConfig, FnVae, MaskMode};
pub use train::{train_fnvae, train_on_stream, train_step, window_starts, TrainConfig, TrainReport};

use crate::checkpoint::{find, read_container, write_container, Section};
use crate::error::{Error, Result};

const SECTION: &str = "fnvae";

impl FnVae {
    fn header(&self) -> Vec<u64> {
        let a = &self.arch;
        [self.dims.d, self.dims.m, a.latent_s, a.latent_r, a.embed, a.lstm_hidden, a.decoder_hidden, a.prior_hidden]
            .iter()
            .map(|&v| v as u64)
            .collect()
    }

    pub fn to_section(&self) -> Section {
        Section::from_store(SECTION, self.header(), &self.store)
    }

    pub fn save(&self, w: impl Write) -> Result<()> {
        write_container(w, &[self.to_section()])
    }

    /// Rebuilds a model from its section; the header fixes the architecture.
    pub fn from_section(s: &Section) -> Result<Self> {
        let h: Vec<usize> = s.header.iter().map(|&v| v as usize).collect();
        if h.len() != 8 {
            return Err(Error::Checkpoint(format!("fnvae header has {} fields, expected 8", h.len())));
        }
        let arch = ArchConfig {
            latent_s: h[2],
            latent_r: h[3],
            embed: h[4],
            lstm_hidden: h[5],
            decoder_hidden: h[6],
            prior_hidden: h[7],
            ..ArchConfig::default()
        };
        let mut model = FnVae::new(h[0], h[1], &arch, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        s.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(r: impl Read) -> Result<Self> {
        let sections = read_container(r)?;
        Self::from_section(find(&sections, SECTION)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StepRecord;
    use crate::numkit::{Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn steps(n: usize, h: usize, d: usize, m: usize, seed: u64) -> Vec<StepRecord> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| StepRecord {
                t_tilde: i as u64,
                episode: (i / h) as u64,
                t: i % h,
                s: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
                r: rng.random_range(-1.0..1.0),
                theta_s: vec![],
                theta_r: vec![],
            })
            .collect()
    }

    fn small_arch() -> ArchConfig {
        ArchConfig { latent_s: 2, latent_r: 1, embed: 4, lstm_hidden: 5, decoder_hidden: 4, prior_hidden: 3, mask_init_logit: 0.3 }
    }

    #[test]
    fn zero_networks_give_standard_heads() {
        let mut model = FnVae::new(2, 1, &small_arch(), 1).unwrap();
        for id in model.store.ids().collect::<Vec<_>>() {
            model.store.get_mut(id).data_mut().fill(0.0);
        }
        let data = steps(6, 10, 2, 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = infer_cf(&model, &data, &mut rng).unwrap();
        assert_eq!(out.len(), 6);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        for st in &out {
            assert!(st.theta_s.mean.data().iter().all(|&v| v == 0.0));
            assert!(st.theta_s.log_var.data().iter().all(|&v| v == 0.0));
            for v in st.sample_s.iter().chain(&st.sample_r) {
                let e: f64 = rand::Rng::sample(&mut rng2, rand_distr::StandardNormal);
                assert_eq!(*v, e);
            }
        }
        assert!(infer_cf(&model, &data[..1], &mut rng).is_err());
    }

    #[test]
    fn inference_is_causal() {
        let model = FnVae::new(2, 1, &small_arch(), 2).unwrap();
        let data = steps(5, 10, 2, 1, 1);
        let mut other = data.clone();
        other[3].r += 1.0;
        other[3].s[0] -= 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = infer_cf(&model, &data, &mut rng).unwrap();
        let b = infer_cf(&model, &other, &mut rng).unwrap();
        for t in 0..3 {
            assert_eq!(a[t].theta_s, b[t].theta_s);
            assert_eq!(a[t].theta_r, b[t].theta_r);
        }
        assert_ne!(a[3].theta_r, b[3].theta_r);
    }

    #[test]
    fn prior_masking() {
        let mut model = FnVae::new(2, 1, &small_arch(), 3).unwrap();
        let ctt = model.logits.ctt_s;
        model.store.get_mut(ctt).data_mut().fill(-50.0);
        let a = cf_prior(&model, CfBlock::State, &[0.3, -1.0], MaskMode::Hard).unwrap();
        let b = cf_prior(&model, CfBlock::State, &[2.0, 5.0], MaskMode::Hard).unwrap();
        assert_eq!(a, b);
        // Only entry [0][1] present: output 0 sees θ₁, output 1 sees nothing.
        model.store.get_mut(ctt).data_mut().copy_from_slice(&[-50.0, 50.0, -50.0, -50.0]);
        let a = cf_prior(&model, CfBlock::State, &[0.3, -1.0], MaskMode::Hard).unwrap();
        let b = cf_prior(&model, CfBlock::State, &[9.0, -1.0], MaskMode::Hard).unwrap();
        assert_eq!(a, b);
        assert!(cf_prior(&model, CfBlock::State, &[1.0], MaskMode::Hard).is_err());
    }

    #[test]
    fn identity_prior_configuration() {
        let mut model = FnVae::new(2, 1, &small_arch(), 4).unwrap();
        for id in model.ids_in_group(model::GROUP_GAMMA) {
            if model.store.name(id).contains(".head.") {
                model.store.get_mut(id).data_mut().fill(0.0);
            }
        }
        let ctt = model.logits.ctt_s;
        model.store.get_mut(ctt).data_mut().copy_from_slice(&[50.0, -50.0, -50.0, 50.0]);
        let h = cf_prior(&model, CfBlock::State, &[0.7, -1.3], MaskMode::Hard).unwrap();
        assert_eq!(h.mean.data(), &[0.7, -1.3]);
    }

    #[test]
    fn l1_smoothness_example() {
        let v = SmoothnessVariant::L1Diff;
        let seq = [[0.0, 0.0], [1.0, 0.0], [1.0, 2.0]];
        let mut total = 0.0;
        for j in 1..seq.len() {
            let w = v.lag_weights(j);
            for dim in 0..2 {
                let reference: f64 = w.iter().enumerate().map(|(l, wt)| wt * seq[j - 1 - l][dim]).sum();
                total += (seq[j][dim] - reference).abs();
            }
        }
        assert_eq!(total, 3.0);
        let ema = SmoothnessVariant::ExponentialMovingAverage { beta: 0.98 }.lag_weights(3);
        assert!((ema[0] - 0.98).abs() < 1e-15 && (ema[1] - 0.98 * 0.02).abs() < 1e-15);
        assert_eq!(SmoothnessVariant::MovingAverage { window: 2 }.lag_weights(1), vec![1.0]);
    }

    #[test]
    fn segment_layout() {
        let data = steps(8, 100, 2, 1, 2);
        let mode = ChangeMode::Discrete { changepoints: vec![4] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Batch::new(vec![data.clone()], &mode, (2, 1), &mut rng).unwrap();
        assert_eq!(b.seqs, vec![vec![0, 1]]);
        assert_eq!(b.seg_head_row, vec![3, 7]);
        // No prediction across the change at step 4.
        assert!(!b.pred_rows.contains(&(0, 3)));
        let one = Batch::new(vec![data.clone()], &ChangeMode::Discrete { changepoints: vec![] }, (2, 1), &mut rng).unwrap();
        assert_eq!(one.segments(), 1);
        let bad = ChangeMode::Discrete { changepoints: vec![5, 2] };
        assert!(Batch::new(vec![data], &bad, (2, 1), &mut rng).is_err());
    }

    #[test]
    fn episode_boundaries_mask_prediction() {
        let data = steps(10, 5, 2, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Batch::new(vec![data], &ChangeMode::Continuous, (2, 1), &mut rng).unwrap();
        assert!(!b.pred_rows.contains(&(0, 4)));
        assert!(b.pred_rows.contains(&(0, 5)));
        assert_eq!(b.segments(), 10);
    }

    #[test]
    fn losses_nonnegative_parts_and_kl_zero_on_match() {
        let model = FnVae::new(2, 1, &small_arch(), 5).unwrap();
        let data = steps(12, 6, 2, 1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Batch::new(vec![data[..6].to_vec(), data[6..].to_vec()], &ChangeMode::Continuous, (2, 1), &mut rng).unwrap();
        let r = compute_losses(&model, &b, &LossWeights::default(), &SmoothnessVariant::L1Diff).unwrap();
        assert!(r.kl >= 0.0 && r.sparse >= 0.0 && r.smooth >= 0.0);
        let mut g = Graph::new();
        let m = g.constant(Tensor::vector(vec![0.3, -0.2]));
        let lv = g.constant(Tensor::vector(vec![0.1, -1.0]));
        let kl = crate::numkit::gaussian::kl_elem(&mut g, m, lv, m, lv);
        assert_eq!(g.value(kl).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = FnVae::new(2, 1, &small_arch(), 6).unwrap();
        model.set_mask_logits(0.2);
        let data = steps(10, 4, 2, 1, 5);
        for mode in [ChangeMode::Continuous, ChangeMode::Discrete { changepoints: vec![3, 6] }] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let b = Batch::new(vec![data[..5].to_vec(), data[5..].to_vec()], &mode, (2, 1), &mut rng).unwrap();
            let w = LossWeights::default();
            let v = SmoothnessVariant::ExponentialMovingAverage { beta: 0.9 };
            let lg = build_loss(&model, &b, &w, &v, MaskMode::Soft, false).unwrap();
            let grads = lg.g.grad(lg.vars.total, lg.bound.vars()).unwrap();
            let flat_grad: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
            let base = model.store.flatten();
            let mut probe = model.clone();
            let f = |probe: &mut FnVae, x: &[f64]| {
                probe.store.load_flat(x).unwrap();
                compute_losses(probe, &b, &w, &v).unwrap().total
            };
            for i in (0..base.len()).step_by(7) {
                let h = 1e-6;
                let mut x = base.clone();
                x[i] += h;
                let up = f(&mut probe, &x);
                x[i] -= 2.0 * h;
                let dn = f(&mut probe, &x);
                let fd = (up - dn) / (2.0 * h);
                let err = (fd - flat_grad[i]).abs() / fd.abs().max(flat_grad[i].abs()).max(1e-3);
                assert!(err < 1e-4, "param {i}: fd {fd} vs {}", flat_grad[i]);
            }
        }
    }

    #[test]
    fn training_guards() {
        let mut model = FnVae::new(2, 1, &small_arch(), 7).unwrap();
        let data = steps(30, 10, 2, 1, 6);
        let traj = crate::env::Trajectory { steps: data, final_s: vec![0.0, 0.0] };
        let before = model.store.clone();
        let cfg = TrainConfig { epochs: 0, batch: 2, window: 12, ..TrainConfig::default() };
        train_fnvae(&mut model, std::slice::from_ref(&traj), &ChangeMode::Continuous, &cfg, true, 0).unwrap();
        assert_eq!(model.store, before);
        let cfg = TrainConfig { epochs: 3, ..cfg };
        train_fnvae(&mut model, std::slice::from_ref(&traj), &ChangeMode::Continuous, &cfg, false, 0).unwrap();
        for id in model.logits.all() {
            assert_eq!(model.store.get(id), before.get(id));
        }
        assert_ne!(model.store, before);
        train_fnvae(&mut model, std::slice::from_ref(&traj), &ChangeMode::Continuous, &cfg, true, 0).unwrap();
        assert_ne!(model.store.get(model.logits.css), before.get(model.logits.css));
    }

    #[test]
    fn mask_extraction() {
        let mut model = FnVae::new(3, 2, &small_arch(), 8).unwrap();
        model.set_mask_logits(-10.0);
        assert_eq!(model.extract_masks(0.5).edge_count(), 0);
        model.set_mask_logits(10.0);
        let full = model.extract_masks(0.5);
        assert_eq!(full, crate::graph::FnMdpGraph::filled(model.dims, true));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for id in model.logits.all() {
            for v in model.store.get_mut(id).data_mut() {
                *v = rand::Rng::random_range(&mut rng, -3.0..3.0);
            }
        }
        let mut last = usize::MAX;
        for i in 1..20 {
            let e = model.extract_masks(i as f64 / 20.0).edge_count();
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = FnVae::new(2, 1, &small_arch(), 9).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let back = FnVae::load(&buf[..]).unwrap();
        assert_eq!(back.store, model.store);
        assert_eq!(back.dims, model.dims);
    }
}

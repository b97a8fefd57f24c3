//! The invariant suite behind `fnmdp validate`: each check compares a
//! library routine with an independent computation on seeded random inputs.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{read_container, write_container};
use crate::env::{collect_trajectories, random_bench_env, BenchConfig, BenchTheta, StepRecord, UniformPolicy};
use crate::fnvae::{build_loss, compute_losses, ArchConfig, Batch, ChangeMode, FnVae, LossWeights, MaskMode, SmoothnessVariant};
use crate::graph::{compact_representation, random_fnmdp_graph, Dag, Dims, NodeKind, UnrolledDbn};
use crate::numkit::{kl_diag_gaussians, GaussianHead, Tensor};
use crate::sac::{Sac, SacBatch, SacConfig};

type Check = std::result::Result<(), String>;

const CHECKS: &[(&str, fn() -> Check)] = &[
    ("gaussian_kl_matches_monte_carlo", gaussian_kl),
    ("d_separation_matches_path_enumeration", d_separation),
    ("compact_representation_matches_unrolled_reachability", compact_rep),
    ("fnvae_gradients_match_finite_differences", fnvae_gradients),
    ("sac_gradients_match_finite_differences", sac_gradients),
    ("simulation_is_seed_deterministic", determinism),
    ("checkpoint_round_trip", checkpoint),
];

/// Runs every check, printing one line each; returns the exit code.
pub fn run(out: &mut impl Write) -> i32 {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let line = match check() {
            Ok(()) => format!("PASS {name}"),
            Err(msg) => {
                failed += 1;
                format!("FAIL {name}: {msg}")
            }
        };
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "{} of {} checks passed", CHECKS.len() - failed, CHECKS.len());
    if failed == 0 {
        0
    } else {
        2
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gaussian_kl() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = GaussianHead::new(Tensor::vector(vec![0.3, -1.0]), Tensor::vector(vec![-0.5, 0.4])).map_err(err)?;
    let p = GaussianHead::new(Tensor::vector(vec![-0.2, 0.5]), Tensor::vector(vec![0.2, -0.3])).map_err(err)?;
    let exact = kl_diag_gaussians(&q, &p).map_err(err)?;
    let log_density = |h: &GaussianHead, x: &[f64]| -> f64 {
        (0..x.len())
            .map(|i| {
                let (m, lv) = (h.mean.data()[i], h.log_var.data()[i]);
                -0.5 * (lv + (x[i] - m).powi(2) / lv.exp() + (2.0 * std::f64::consts::PI).ln())
            })
            .sum()
    };
    let n = 200_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let x: Vec<f64> = (0..2)
            .map(|i| q.mean.data()[i] + (0.5 * q.log_var.data()[i]).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let v = log_density(&q, &x) - log_density(&p, &x);
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    if (mean - exact).abs() > 5.0 * se {
        return Err(format!("closed form {exact}, sampled {mean} ± {se}"));
    }
    Ok(())
}

/// Whether some simple path between `x` and `y` is open given `z`.
fn open_path_exists(dag: &Dag, x: usize, y: usize, z: &[bool]) -> bool {
    let n = dag.len();
    // a node has a descendant in Z (itself included) iff it is an ancestor of Z
    let desc_in_z = dag.ancestors_of(&(0..n).filter(|&w| z[w]).collect::<Vec<_>>());
    let neighbours = |v: usize| dag.parents(v).iter().chain(dag.children(v)).copied().collect::<Vec<_>>();
    fn walk(
        dag: &Dag,
        path: &mut Vec<usize>,
        y: usize,
        z: &[bool],
        desc_in_z: &[bool],
        neighbours: &dyn Fn(usize) -> Vec<usize>,
    ) -> bool {
        let v = *path.last().expect("path starts nonempty");
        if v == y {
            return (1..path.len() - 1).all(|i| {
                let (a, b, c) = (path[i - 1], path[i], path[i + 1]);
                let collider = dag.parents(b).contains(&a) && dag.parents(b).contains(&c);
                if collider {
                    desc_in_z[b]
                } else {
                    !z[b]
                }
            });
        }
        for w in neighbours(v) {
            if !path.contains(&w) {
                path.push(w);
                if walk(dag, path, y, z, desc_in_z, neighbours) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    walk(dag, &mut vec![x], y, z, &desc_in_z, &neighbours)
}

fn d_separation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..200 {
        let n = 7;
        let mut dag = Dag::new(n);
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(0.35) {
                    dag.add_edge(u, v);
                }
            }
        }
        let x = rng.random_range(0..n);
        let y = (x + rng.random_range(1..n)) % n;
        let z: Vec<bool> = (0..n).map(|v| v != x && v != y && rng.random_bool(0.3)).collect();
        let zs: Vec<usize> = (0..n).filter(|&v| z[v]).collect();
        let fast = dag.d_separated(&[x], &[y], &zs).map_err(err)?;
        let slow = !open_path_exists(&dag, x, y, &z);
        if fast != slow {
            return Err(format!("trial {trial}: {x} vs {y} given {zs:?}: reachability {fast}, paths {slow}"));
        }
    }
    Ok(())
}

fn compact_rep() -> Check {
    for seed in 0..30 {
        let dims = Dims { d: 4, m: 2, p: 2, q: 1 };
        let g = random_fnmdp_graph(seed, dims, 0.3).map_err(err)?;
        let horizon = dims.d + dims.p + 3;
        let u = UnrolledDbn::new(&g, horizon).map_err(err)?;
        let rewards: Vec<usize> = (1..horizon).map(|t| u.node(NodeKind::Reward, t)).collect();
        let anc = u.dag.ancestors_of(&rewards);
        let reach = |kind: fn(usize) -> NodeKind, n: usize| -> Vec<usize> {
            (0..n).filter(|&i| anc[u.node(kind(i), 0)]).collect()
        };
        let c = compact_representation(&g);
        let expect = (reach(NodeKind::State, dims.d), reach(NodeKind::ThetaS, dims.p), reach(NodeKind::ThetaR, dims.q));
        if (c.state.clone(), c.theta_s.clone(), c.theta_r.clone()) != expect {
            return Err(format!("graph seed {seed}: fixed point {c:?}, unrolled {expect:?}"));
        }
    }
    Ok(())
}

fn bench_steps(n_episodes: usize) -> std::result::Result<Vec<StepRecord>, String> {
    let mut cfg = BenchConfig::linear(5, BenchTheta::Markov { noise: 0.3 });
    cfg.dims = Dims { d: 2, m: 1, p: 1, q: 1 };
    cfg.horizon = 6;
    let spec = random_bench_env(&cfg).map_err(err)?;
    let mut policy = UniformPolicy::new(1, 6);
    let trajs = collect_trajectories(&spec, 7, &mut policy, n_episodes, false).map_err(err)?;
    Ok(trajs.into_iter().flat_map(|t| t.steps).collect())
}

fn relative_gap(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

fn fnvae_gradients() -> Check {
    let arch = ArchConfig { latent_s: 1, latent_r: 1, embed: 4, lstm_hidden: 4, decoder_hidden: 4, prior_hidden: 3, mask_init_logit: 0.2 };
    let model = FnVae::new(2, 1, &arch, 3).map_err(err)?;
    let data = bench_steps(2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = Batch::new(vec![data[..6].to_vec(), data[6..].to_vec()], &ChangeMode::Continuous, (1, 1), &mut rng)
        .map_err(err)?;
    let w = LossWeights::default();
    let v = SmoothnessVariant::default();
    let lg = build_loss(&model, &b, &w, &v, MaskMode::Soft, false).map_err(err)?;
    let grads = lg.g.grad(lg.vars.total, lg.bound.vars()).map_err(err)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
    let base = model.store.flatten();
    let mut probe = model.clone();
    let mut f = |x: &[f64]| -> std::result::Result<f64, String> {
        probe.store.load_flat(x).map_err(err)?;
        Ok(compute_losses(&probe, &b, &w, &v).map_err(err)?.total)
    };
    for i in (0..base.len()).step_by(11) {
        let h = 1e-6;
        let mut x = base.clone();
        x[i] += h;
        let up = f(&x)?;
        x[i] -= 2.0 * h;
        let fd = (up - f(&x)?) / (2.0 * h);
        if relative_gap(fd, analytic[i]) > 1e-4 {
            return Err(format!("parameter {i}: finite difference {fd}, tape {}", analytic[i]));
        }
    }
    Ok(())
}

fn sac_gradients() -> Check {
    let cfg = SacConfig { hidden: 8, init_scale: 0.5, ..SacConfig::default() };
    let sac = Sac::new(3, 1, &cfg, 9).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 5;
    let mut row = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let obs: Vec<Vec<f64>> = (0..n).map(|_| row(3)).collect();
    let act: Vec<Vec<f64>> = (0..n).map(|_| row(1)).collect();
    let next: Vec<Vec<f64>> = (0..n).map(|_| row(3)).collect();
    let rew = row(n);
    let b = SacBatch::new(obs, act, rew, next, vec![false; n]).map_err(err)?;
    let targets = Tensor::matrix(n, 1, row(n));
    let eps = Tensor::matrix(n, 1, row(n));

    let check = |which: &str, store: &crate::numkit::ParamStore| -> Check {
        let eval = |s: &crate::numkit::ParamStore| {
            let (g, p, loss, _) =
                if which == "critic" { sac.critic_objective(s, &b, &targets) } else { sac.actor_objective(s, &b, &eps) };
            (g, p, loss)
        };
        let (g, p, loss) = eval(store);
        let analytic: Vec<f64> =
            g.grad(loss, p.vars()).map_err(err)?.iter().flat_map(|t| t.data().to_vec()).collect();
        let base = store.flatten();
        let mut probe = store.clone();
        for i in (0..base.len()).step_by(5) {
            let h = 1e-6;
            let mut value = |x: &[f64]| -> std::result::Result<f64, String> {
                probe.load_flat(x).map_err(err)?;
                let (g, _, loss) = eval(&probe);
                Ok(g.value(loss).data()[0])
            };
            let mut x = base.clone();
            x[i] += h;
            let up = value(&x)?;
            x[i] -= 2.0 * h;
            let fd = (up - value(&x)?) / (2.0 * h);
            if relative_gap(fd, analytic[i]) > 1e-4 {
                return Err(format!("{which} parameter {i}: finite difference {fd}, tape {}", analytic[i]));
            }
        }
        Ok(())
    };
    check("critic", &sac.critic_store)?;
    check("actor", &sac.actor_store)
}

fn determinism() -> Check {
    let a = bench_steps(3)?;
    let b = bench_steps(3)?;
    if a != b {
        return Err("two runs from one seed differ".into());
    }
    Ok(())
}

fn checkpoint() -> Check {
    let arch = ArchConfig { latent_s: 1, latent_r: 2, embed: 5, lstm_hidden: 4, decoder_hidden: 6, prior_hidden: 3, ..ArchConfig::default() };
    let model = FnVae::new(3, 2, &arch, 21).map_err(err)?;
    let mut bytes = Vec::new();
    write_container(&mut bytes, &[model.to_section()]).map_err(err)?;
    let sections = read_container(&bytes[..]).map_err(err)?;
    let back = FnVae::load(&bytes[..]).map_err(err)?;
    if sections.len() != 1 || back.store != model.store {
        return Err("reloaded parameters differ".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let mut out = Vec::new();
        let code = run(&mut out);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(code, 0, "{text}");
        assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), CHECKS.len());
    }

    #[test]
    fn path_enumeration_on_a_collider() {
        let mut dag = Dag::new(4);
        dag.add_edge(0, 2);
        dag.add_edge(1, 2);
        dag.add_edge(2, 3);
        let z = |v: &[usize]| (0..4).map(|i| v.contains(&i)).collect::<Vec<_>>();
        assert!(!open_path_exists(&dag, 0, 1, &z(&[])));
        assert!(open_path_exists(&dag, 0, 1, &z(&[3])));
        assert!(open_path_exists(&dag, 0, 3, &z(&[])));
        assert!(!open_path_exists(&dag, 0, 3, &z(&[2])));
    }
}

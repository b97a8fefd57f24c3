//! Acceptance gate. Each test prints one `[PASS]`/`[FAIL]` line for its
//! criterion and fails when the criterion does not hold. Tests take a
//! shared lock so runtime limits are measured without contention.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fnmdp::driver::analysis::theta_distance_matrix;
use fnmdp::driver::{
    env_changepoints, run_fansrl, run_many, run_method, summarize, theta_samples, Method, RunConfig, RunMetrics,
    RunMode,
};
use fnmdp::env::{
    collect_trajectories, make_tracking_env, random_bench_env, BenchConfig, BenchTheta, ChangeFn, Schedule, StepRecord,
    ThetaProcess, TrackingConfig, UniformPolicy,
};
use fnmdp::fnvae::{build_loss, compute_losses, ArchConfig, Batch, ChangeMode, FnVae, LossWeights, MaskMode, SmoothnessVariant};
use fnmdp::graph::{compact_representation, random_fnmdp_graph, shd, Dag, Dims, FnMdpGraph, NodeKind, UnrolledDbn};
use fnmdp::ident::{identify_full, identify_partial, shd_observed, CiConfig};
use fnmdp::numkit::{kl_diag_gaussians, GaussianHead, Graph, ParamStore, Tensor, Var};
use fnmdp::sac::{Sac, SacBatch, SacConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes to the raw stderr handle, which the test harness does not capture,
/// so every criterion line shows up in a plain `cargo test` run.
fn emit(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    emit(&format!("criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1, 2: identification

#[test]
fn criterion_01_full_identifiability() {
    let _g = serial();
    let mut exact = 0;
    let mut slowest = Duration::ZERO;
    let mut shds = Vec::new();
    for seed in 0..10u64 {
        let t = Instant::now();
        let spec = random_bench_env(&BenchConfig::linear(seed, BenchTheta::Markov { noise: 0.3 })).unwrap();
        assert_eq!(spec.dims(), Dims { d: 4, m: 1, p: 2, q: 1 });
        // 400 episodes of 50 steps: 20,000 transitions
        let trajs = collect_trajectories(&spec, seed, &mut UniformPolicy::new(1, seed), 400, true).unwrap();
        assert_eq!(trajs.iter().map(|t| t.len()).sum::<usize>(), 20_000);
        let r = identify_full(&trajs, &CiConfig { alpha: 0.01, ..CiConfig::default() }).unwrap();
        let s = shd(&r.recovered, &spec.graph).unwrap();
        slowest = slowest.max(t.elapsed());
        exact += usize::from(s == 0);
        shds.push(s);
    }
    let pass = exact >= 9 && slowest < Duration::from_secs(120);
    let detail = format!("SHD=0 on {exact}/10 seeds (need ≥ 9), per-seed SHD {shds:?}, slowest seed {slowest:.1?} (limit 2 min)");
    report(1, "full identifiability", pass, &detail);
}

#[test]
fn criterion_02_partial_identifiability() {
    let _g = serial();
    let freqs = vec![0.005, 0.011, 0.023];
    let mut exact = 0;
    let mut support_ok = true;
    let mut direction_ok = true;
    let mut notes = Vec::new();
    for stationary_reward in [false, true] {
        for seed in 0..10u64 {
            let theta = BenchTheta::Sines { freqs: freqs.clone(), stationary_reward };
            let spec = random_bench_env(&BenchConfig::linear(seed, theta)).unwrap();
            let trajs = collect_trajectories(&spec, seed, &mut UniformPolicy::new(1, seed), 400, false).unwrap();
            let r = identify_partial(&trajs, &CiConfig::default()).unwrap();
            if r.reward_nonstationary == stationary_reward {
                direction_ok = false;
                notes.push(format!("seed {seed} stationary={stationary_reward}: reward flag wrong"));
            }
            if stationary_reward {
                continue;
            }
            let s = shd_observed(&r.recovered, &spec.graph).unwrap();
            if s == 0 {
                exact += 1;
                if r.change_affected != spec.graph.cts_row_support() {
                    support_ok = false;
                    notes.push(format!("seed {seed}: change_affected differs from Cts row support"));
                }
            }
        }
    }
    let pass = exact >= 8 && support_ok && direction_ok;
    let detail = format!(
        "observed-block SHD=0 on {exact}/10 seeds (need ≥ 8); change_affected exact on passing seeds: {support_ok}; \
         reward non-stationarity correct in both variants on all seeds: {direction_ok} {notes:?}"
    );
    report(2, "partial identifiability", pass, &detail);
}

// ---------------------------------------------------------------------------
// 3: d-separation

/// Brute force: X and Y are d-connected given Z iff some simple path in the
/// skeleton has every collider in Z or with a descendant in Z, and no other
/// interior node in Z.
fn d_connected_by_paths(dag: &Dag, x: usize, y: usize, z: &[bool]) -> bool {
    let n = dag.len();
    let descendants = |v: usize| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![v];
        while let Some(u) = stack.pop() {
            if !seen[u] {
                seen[u] = true;
                stack.extend_from_slice(dag.children(u));
            }
        }
        seen
    };
    let collider_open: Vec<bool> = (0..n).map(|v| descendants(v).iter().zip(z).any(|(&d, &zz)| d && zz)).collect();
    let mut path = vec![x];
    let mut on_path = vec![false; n];
    on_path[x] = true;
    fn dfs(
        dag: &Dag,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        y: usize,
        z: &[bool],
        collider_open: &[bool],
    ) -> bool {
        let v = *path.last().unwrap();
        if v == y {
            return true;
        }
        let next: Vec<usize> = dag.parents(v).iter().chain(dag.children(v)).copied().collect();
        for w in next {
            if on_path[w] {
                continue;
            }
            // v is interior once w is appended; its status is now decidable
            if path.len() >= 2 {
                let a = path[path.len() - 2];
                let collider = dag.parents(v).contains(&a) && dag.parents(v).contains(&w);
                let open = if collider { collider_open[v] } else { !z[v] };
                if !open {
                    continue;
                }
            }
            path.push(w);
            on_path[w] = true;
            if dfs(dag, path, on_path, y, z, collider_open) {
                return true;
            }
            path.pop();
            on_path[w] = false;
        }
        false
    }
    dfs(dag, &mut path, &mut on_path, y, z, &collider_open)
}

#[test]
fn criterion_03_d_separation_oracle() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut queries, mut agree) = (0usize, 0usize);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let density = rng.random_range(0.15..0.6);
        let order: Vec<usize> = {
            let mut o: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                o.swap(i, rng.random_range(0..=i));
            }
            o
        };
        let mut dag = Dag::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    dag.add_edge(order[i], order[j]);
                }
            }
        }
        for x in 0..n {
            for y in x + 1..n {
                let rest: Vec<usize> = (0..n).filter(|&v| v != x && v != y).collect();
                for bits in 0u32..(1 << rest.len()) {
                    let zs: Vec<usize> = rest.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, &v)| v).collect();
                    let mut z = vec![false; n];
                    zs.iter().for_each(|&v| z[v] = true);
                    let fast = dag.d_separated(&[x], &[y], &zs).unwrap();
                    let slow = !d_connected_by_paths(&dag, x, y, &z);
                    queries += 1;
                    agree += usize::from(fast == slow);
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = agree == queries && elapsed < Duration::from_secs(60);
    let detail = format!("{agree}/{queries} queries agree on 200 DAGs; {elapsed:.1?} (limit 1 min)");
    report(3, "d-separation oracle equivalence", pass, &detail);
}

// ---------------------------------------------------------------------------
// 4: gradients

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

/// Relative error with the denominator floored at 1e-3, so vanishing
/// gradients are compared absolutely.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

/// Worst error over the parameters `idx` of `f` at `x0` against `grad`.
fn fd_worst(x0: &[f64], grad: &[f64], idx: impl Iterator<Item = usize>, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut x = x0.to_vec();
    for i in idx {
        x[i] = x0[i] + FD_STEP;
        let up = f(&x);
        x[i] = x0[i] - FD_STEP;
        let dn = f(&x);
        x[i] = x0[i];
        worst = worst.max(rel_err((up - dn) / (2.0 * FD_STEP), grad[i]));
    }
    worst
}

type OpFn = fn(&mut Graph, &[Var]) -> Var;

/// Each op with its input shapes and a sampler keeping inputs off kinks.
fn numkit_ops() -> Vec<(&'static str, Vec<Vec<usize>>, fn(&mut ChaCha8Rng) -> f64, OpFn)> {
    fn any(r: &mut ChaCha8Rng) -> f64 {
        r.random_range(-2.0..2.0)
    }
    fn off_zero(r: &mut ChaCha8Rng) -> f64 {
        let v: f64 = r.random_range(0.2..2.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    }
    fn positive(r: &mut ChaCha8Rng) -> f64 {
        r.random_range(0.3..3.0)
    }
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], any, |g, v| g.add(v[0], v[1])),
        ("add_broadcast", vec![vec![3, 4], vec![4]], any, |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], any, |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], any, |g, v| g.mul(v[0], v[1])),
        ("mul_broadcast", vec![vec![3, 4], vec![3, 1]], any, |g, v| g.mul(v[0], v[1])),
        ("div", vec![vec![3, 4], vec![3, 4]], off_zero, |g, v| g.div(v[0], v[1])),
        ("min", vec![vec![3, 4], vec![3, 4]], any, |g, v| g.min(v[0], v[1])),
        ("neg", vec![vec![3, 4]], any, |g, v| g.neg(v[0])),
        ("scale", vec![vec![3, 4]], any, |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", vec![vec![3, 4]], any, |g, v| g.add_scalar(v[0], 0.3)),
        ("tanh", vec![vec![3, 4]], any, |g, v| g.tanh(v[0])),
        ("sigmoid", vec![vec![3, 4]], any, |g, v| g.sigmoid(v[0])),
        ("exp", vec![vec![3, 4]], any, |g, v| g.exp(v[0])),
        ("ln", vec![vec![3, 4]], positive, |g, v| g.ln(v[0])),
        ("relu", vec![vec![3, 4]], off_zero, |g, v| g.relu(v[0])),
        ("abs", vec![vec![3, 4]], off_zero, |g, v| g.abs(v[0])),
        ("square", vec![vec![3, 4]], any, |g, v| g.square(v[0])),
        ("softplus", vec![vec![3, 4]], any, |g, v| g.softplus(v[0])),
        ("clamp", vec![vec![3, 4]], any, |g, v| g.clamp(v[0], -1.0, 1.0)),
        ("matmul", vec![vec![3, 4], vec![4, 2]], any, |g, v| g.matmul(v[0], v[1])),
        ("sum", vec![vec![3, 4]], any, |g, v| g.sum(v[0])),
        ("mean", vec![vec![3, 4]], any, |g, v| g.mean(v[0])),
        ("sum_rows", vec![vec![3, 4]], any, |g, v| g.sum_rows(v[0])),
        ("sum_cols", vec![vec![3, 4]], any, |g, v| g.sum_cols(v[0])),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], any, |g, v| g.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![vec![2, 4], vec![3, 4]], any, |g, v| g.concat_rows(&[v[0], v[1]])),
        ("slice_cols", vec![vec![3, 4]], any, |g, v| g.slice_cols(v[0], 1, 3)),
        ("slice_rows", vec![vec![3, 4]], any, |g, v| g.slice_rows(v[0], 1, 3)),
        ("gather_rows", vec![vec![3, 4]], any, |g, v| g.gather_rows(v[0], vec![2, 0, 2, 1])),
        ("reshape", vec![vec![3, 4]], any, |g, v| g.reshape(v[0], &[2, 6])),
    ]
}

/// `Σ w ⊙ op(inputs)` with fixed random weights, so every output entry
/// carries a distinct upstream gradient.
fn weighted_output(op: OpFn, shapes: &[Vec<usize>], flat: &[f64], weights_seed: u64) -> (Graph, Vec<Var>, Var) {
    let mut g = Graph::new();
    let mut vars = Vec::new();
    let mut off = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        vars.push(g.param(Tensor::new(s.clone(), flat[off..off + n].to_vec()).unwrap()));
        off += n;
    }
    let out = op(&mut g, &vars);
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let mut wr = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = g.constant(Tensor::new(shape, (0..n).map(|_| wr.random_range(-1.0..1.0)).collect()).unwrap());
    let prod = g.mul(out, w);
    let loss = g.sum(prod);
    (g, vars, loss)
}

fn numkit_worst(rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (name, shapes, sample, op) in numkit_ops() {
        let mut worst = 0.0f64;
        for inst in 0..20u64 {
            let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            let mut x0: Vec<f64> = (0..total).map(|_| sample(rng)).collect();
            if name == "clamp" {
                // keep entries away from the clamp bounds
                x0.iter_mut().filter(|v| (v.abs() - 1.0).abs() < 0.05).for_each(|v| *v *= 1.2);
            }
            if name == "min" {
                let half = total / 2;
                for i in 0..half {
                    if (x0[i] - x0[half + i]).abs() < 0.05 {
                        x0[i] += 0.2;
                    }
                }
            }
            let (g, vars, loss) = weighted_output(op, &shapes, &x0, inst);
            let grad: Vec<f64> = g.grad(loss, &vars).unwrap().iter().flat_map(|t| t.data().to_vec()).collect();
            let w = fd_worst(&x0, &grad, 0..total, |x| {
                let (g, _, l) = weighted_output(op, &shapes, x, inst);
                g.item(l)
            });
            worst = worst.max(w);
        }
        out.push((name.to_string(), worst));
    }
    out
}

fn random_steps(rng: &mut ChaCha8Rng, n: usize, d: usize, m: usize, start: u64) -> Vec<StepRecord> {
    (0..n)
        .map(|i| StepRecord {
            t_tilde: start + i as u64,
            episode: 0,
            t: i,
            s: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            a: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            r: rng.random_range(-1.0..1.0),
            theta_s: vec![],
            theta_r: vec![],
        })
        .collect()
}

fn fnvae_worst(rng: &mut ChaCha8Rng, discrete: bool) -> f64 {
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let (d, m) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let arch = ArchConfig {
            latent_s: rng.random_range(1..=2),
            latent_r: rng.random_range(1..=2),
            embed: 4,
            lstm_hidden: 4,
            decoder_hidden: 5,
            prior_hidden: 3,
            mask_init_logit: 0.0,
        };
        let mut model = FnVae::new(d, m, &arch, 100 + inst).unwrap();
        for id in model.logits.all() {
            model.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        }
        let len = 6;
        let windows = vec![random_steps(rng, len, d, m, 0), random_steps(rng, len, d, m, 40)];
        let mode = if discrete {
            ChangeMode::Discrete { changepoints: vec![2, 4, 43] }
        } else {
            ChangeMode::Continuous
        };
        let b = Batch::new(windows, &mode, (arch.latent_s, arch.latent_r), rng).unwrap();
        let w = LossWeights::default();
        let variant = match inst % 3 {
            0 => SmoothnessVariant::L1Diff,
            1 => SmoothnessVariant::MovingAverage { window: 3 },
            _ => SmoothnessVariant::ExponentialMovingAverage { beta: 0.8 },
        };
        let lg = build_loss(&model, &b, &w, &variant, MaskMode::Soft, false).unwrap();
        let grad: Vec<f64> = lg.g.grad(lg.vars.total, lg.bound.vars()).unwrap().iter().flat_map(|t| t.data().to_vec()).collect();
        let base = model.store.flatten();
        let mut probe = model.clone();
        let picks: Vec<usize> = (0..40).map(|_| rng.random_range(0..base.len())).collect();
        worst = worst.max(fd_worst(&base, &grad, picks.into_iter(), |x| {
            probe.store.load_flat(x).unwrap();
            compute_losses(&probe, &b, &w, &variant).unwrap().total
        }));
    }
    worst
}

fn sac_worst(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (mut wc, mut wa) = (0.0f64, 0.0f64);
    for inst in 0..20u64 {
        let (k, m, n) = (rng.random_range(1..=4), rng.random_range(1..=2), 6);
        let cfg = SacConfig { hidden: 8, init_scale: 0.5, ..SacConfig::default() };
        let sac = Sac::new(k, m, &cfg, 200 + inst).unwrap();
        let mut mat = |r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (obs, act, next) = (mat(n, k), mat(n, m), mat(n, k));
        let rew: Vec<f64> = mat(1, n).remove(0);
        let b = SacBatch::new(obs, act, rew, next, vec![false; n]).unwrap();
        let targets = Tensor::matrix(n, 1, mat(1, n).remove(0));
        let eps = Tensor::matrix(n, m, (0..n * m).map(|_| rng.sample(StandardNormal)).collect());

        let check = |store: &ParamStore, critic: bool| -> f64 {
            let eval = |s: &ParamStore| if critic { sac.critic_objective(s, &b, &targets) } else { sac.actor_objective(s, &b, &eps) };
            let (g, p, loss, _) = eval(store);
            let grad: Vec<f64> = g.grad(loss, p.vars()).unwrap().iter().flat_map(|t| t.data().to_vec()).collect();
            let base = store.flatten();
            let mut probe = store.clone();
            fd_worst(&base, &grad, 0..base.len(), |x| {
                probe.load_flat(x).unwrap();
                let (g, _, l, _) = eval(&probe);
                g.item(l)
            })
        };
        wc = wc.max(check(&sac.critic_store, true));
        wa = wa.max(check(&sac.actor_store, false));
    }
    (wc, wa)
}

#[test]
fn criterion_04_gradient_correctness() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: Vec<(String, f64)> = numkit_worst(&mut rng);
    worst.push(("fnvae_continuous".into(), fnvae_worst(&mut rng, false)));
    worst.push(("fnvae_discrete".into(), fnvae_worst(&mut rng, true)));
    let (c, a) = sac_worst(&mut rng);
    worst.push(("sac_critic".into(), c));
    worst.push(("sac_actor".into(), a));
    let failing: Vec<_> = worst.iter().filter(|(_, e)| *e >= FD_TOL).collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = format!(
        "{} objectives × 20 instances, worst relative error {max:.2e} (limit {FD_TOL:.0e}); failing {failing:?}",
        worst.len()
    );
    report(4, "gradient correctness", failing.is_empty(), &detail);
}

// ---------------------------------------------------------------------------
// 5: KL

#[test]
fn criterion_05_kl_closed_form() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let head = |rng: &mut ChaCha8Rng| {
        let mean: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lv: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        GaussianHead::new(Tensor::vector(mean), Tensor::vector(lv)).unwrap()
    };
    let mut identical_zero = true;
    for _ in 0..10 {
        let (q, p) = (head(&mut rng), head(&mut rng));
        let exact = kl_diag_gaussians(&q, &p).unwrap();
        let (qm, qv, pm, pv) = (q.mean.data(), q.log_var.data(), p.mean.data(), p.log_var.data());
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut v = 0.0;
            for i in 0..8 {
                let e: f64 = rng.sample(StandardNormal);
                let x = qm[i] + (0.5 * qv[i]).exp() * e;
                // log q − log p, shared constants cancel
                v += -0.5 * (qv[i] + e * e) + 0.5 * (pv[i] + (x - pm[i]).powi(2) / pv[i].exp());
            }
            acc += v;
        }
        let mc = acc / n as f64;
        worst = worst.max((mc - exact).abs() / exact.abs());
        identical_zero &= kl_diag_gaussians(&q, &q).unwrap() == 0.0;
    }
    let pass = worst < 0.01 && identical_zero;
    let detail = format!("worst relative gap to 10⁶-sample estimate {worst:.2e} (limit 1e-2); identical heads give 0: {identical_zero}");
    report(5, "KL closed form", pass, &detail);
}

// ---------------------------------------------------------------------------
// 6, 7: tracking benchmark

fn tracking_run_config() -> RunConfig {
    let mut cfg = RunConfig { episodes: 300, mode: RunMode::Continuous, ..RunConfig::default() };
    cfg.arch.latent_s = 1;
    cfg.arch.latent_r = 1;
    cfg.fnvae.window = 50;
    cfg
}

#[test]
fn criterion_06_07_return_ordering_and_theta_distances() {
    let _g = serial();
    let tracking = TrackingConfig::default();
    assert_eq!(tracking.horizon, 50);
    assert_eq!(
        tracking.target,
        ThetaProcess::Scheduled {
            schedule: Schedule::AcrossEpisode,
            fns: vec![ChangeFn::Sine { offset: 1.5, amp: 1.5, freq: 0.2 }]
        }
    );
    let spec = make_tracking_env(&tracking).unwrap();
    let cfg = tracking_run_config();
    let seeds = [0, 1, 2, 3, 4];
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let t = Instant::now();
    let runs = run_many(&Method::ALL, &spec, &cfg, &seeds, threads).unwrap();
    let elapsed = t.elapsed();
    let sum = summarize(&runs, 50);
    let (f, o, s) = (sum.get(Method::Fansrl).unwrap(), sum.get(Method::Oracle).unwrap(), sum.get(Method::Sac).unwrap());
    let pooled = ((f.std.powi(2) + s.std.powi(2)) / 2.0).sqrt();
    let dims_ok = runs.iter().all(|r| r.input_dim == r.compact.input_dim());
    let pass = s.mean < f.mean
        && f.mean <= o.mean + o.std
        && f.mean - s.mean > pooled
        && elapsed < Duration::from_secs(30 * 60)
        && dims_ok;
    let detail = format!(
        "final-50 return sac {:.2}±{:.2} < fansrl {:.2}±{:.2} ≤ oracle {:.2}±{:.2} (+σ); margin {:.2} vs pooled SD {pooled:.2}; \
         {elapsed:.0?} on {threads} thread(s) (limit 30 min)",
        s.mean, s.std, f.mean, f.std, o.mean, o.std, f.mean - s.mean
    );
    emit(&format!("per-seed fansrl {:?} oracle {:?} sac {:?}", f.per_seed, o.per_seed, s.per_seed));

    let rhos: Vec<f64> = runs
        .iter()
        .filter(|r| r.method == Method::Fansrl)
        .map(|r| {
            let (learned, truth) = theta_samples(r, 50, 10);
            theta_distance_matrix(&learned, &truth).unwrap().1
        })
        .collect();
    let mean_rho = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let rho_detail = format!(
        "mean Spearman ρ over {} seeds {mean_rho:.3} (need ≥ 0.5), per seed {:?}",
        rhos.len(),
        rhos.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    // print both lines before asserting either
    emit(&format!("criterion  7 [{}] θ-distance correlation: {rho_detail}", if mean_rho >= 0.5 { "PASS" } else { "FAIL" }));
    report(6, "return ordering", pass, &detail);
    assert!(mean_rho >= 0.5, "criterion 7 failed: {rho_detail}");
}

// ---------------------------------------------------------------------------
// 8: discrete changes

#[test]
fn criterion_08_discrete_change_semantics() {
    let _g = serial();
    let horizon = 20;
    let cfg = TrackingConfig {
        horizon,
        wind: ThetaProcess::Scheduled {
            schedule: Schedule::ExplicitChangepoints { points: vec![35, 90, 170, 333, 500] },
            fns: vec![ChangeFn::Sine { offset: 10.0, amp: 10.0, freq: 0.5 }],
        },
        target: ThetaProcess::Scheduled {
            schedule: Schedule::WithinEpisode { period: 10 },
            fns: vec![ChangeFn::Sine { offset: 1.0, amp: 0.75, freq: 0.3 }],
        },
        wind_gain: 0.05,
        ..TrackingConfig::default()
    };
    let spec = make_tracking_env(&cfg).unwrap();
    let mut rc = RunConfig { episodes: 30, mode: RunMode::Discrete, n_init: 5, window: 20, ..RunConfig::default() };
    rc.fnvae.epochs = 50;
    rc.fnvae.window = 20;
    let run = run_fansrl(&spec, &rc, 8).unwrap();
    let lifetime = run.trace.last().unwrap().t_tilde + 1;
    let cps = env_changepoints(&spec, lifetime).unwrap();
    let mut bounds = vec![0u64];
    bounds.extend(&cps);
    bounds.push(lifetime);
    let mut segments = 0;
    let mut violations = 0;
    let mut changes = 0;
    for w in bounds.windows(2) {
        let seg: Vec<_> = run.trace.iter().filter(|s| s.t_tilde >= w[0] && s.t_tilde < w[1]).collect();
        if seg.is_empty() {
            continue;
        }
        segments += 1;
        violations += seg.iter().filter(|s| s.theta_s != seg[0].theta_s || s.theta_r != seg[0].theta_r).count();
    }
    for pair in run.trace.windows(2) {
        changes += usize::from(pair[0].theta_r != pair[1].theta_r);
    }
    let pass = violations == 0 && segments > 1 && changes > 0;
    let detail = format!(
        "{} steps, {segments} segments between {} changepoints: {violations} steps differ from their segment's θ \
         ({changes} estimate changes, all at changepoints)",
        run.trace.len(),
        cps.len()
    );
    report(8, "discrete-change semantics", pass, &detail);
}

// ---------------------------------------------------------------------------
// 9: compact representation

/// Breadth-first search backwards from every reward node of the unrolled
/// graph; slice-0 nodes reached are those with a path to some reward.
fn bfs_compact(g: &FnMdpGraph) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let Dims { d, p, q, .. } = g.dims;
    let horizon = d + p + 3;
    let u = UnrolledDbn::new(g, horizon).unwrap();
    let mut seen = vec![false; u.node_count()];
    let mut queue: VecDeque<usize> = (1..horizon).map(|t| u.node(NodeKind::Reward, t)).collect();
    while let Some(v) = queue.pop_front() {
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        queue.extend(u.dag.parents(v).iter().copied().filter(|&w| !seen[w]));
    }
    let pick = |kind: fn(usize) -> NodeKind, n: usize| (0..n).filter(|&i| seen[u.node(kind(i), 0)]).collect();
    (pick(NodeKind::State, d), pick(NodeKind::ThetaS, p), pick(NodeKind::ThetaR, q))
}

#[test]
fn criterion_09_compact_representation() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut agree = 0;
    for i in 0..500u64 {
        let dims = Dims {
            d: rng.random_range(1..=6),
            m: rng.random_range(1..=6),
            p: rng.random_range(0..=6),
            q: rng.random_range(0..=6),
        };
        let g = random_fnmdp_graph(i, dims, rng.random_range(0.05..0.7)).unwrap();
        let c = compact_representation(&g);
        agree += usize::from((c.state.clone(), c.theta_s.clone(), c.theta_r.clone()) == bfs_compact(&g));
    }

    let mut runs: Vec<RunMetrics> = Vec::new();
    let small = |h: usize| RunConfig { episodes: 3, n_init: 2, window: 10, refresh_every: 5, refresh_batch: 2, ..RunConfig::default() }
        .with_horizon(h);
    let tracking = make_tracking_env(&TrackingConfig { horizon: 15, ..TrackingConfig::default() }).unwrap();
    let mut bench_cfg = BenchConfig::linear(2, BenchTheta::Sines { freqs: vec![0.01, 0.02], stationary_reward: false });
    bench_cfg.horizon = 15;
    let bench = random_bench_env(&bench_cfg).unwrap();
    for spec in [&tracking, &bench] {
        for m in Method::ALL {
            runs.push(run_method(m, spec, &small(15), 1).unwrap());
        }
    }
    let dims_ok = runs.iter().filter(|r| r.input_dim == r.compact.input_dim()).count();
    let pass = agree == 500 && dims_ok == runs.len();
    let detail = format!(
        "{agree}/500 graphs match the unrolled-graph BFS; policy input width equals |s_min|+|θ_min| in {dims_ok}/{} driver runs",
        runs.len()
    );
    report(9, "compact-representation correctness", pass, &detail);
}

trait WithHorizon {
    fn with_horizon(self, h: usize) -> Self;
}

impl WithHorizon for RunConfig {
    fn with_horizon(mut self, h: usize) -> Self {
        self.fnvae.epochs = 5;
        self.fnvae.batch = 2;
        self.fnvae.window = h;
        self.arch.embed = 8;
        self.arch.lstm_hidden = 8;
        self.sac.batch = 8;
        self
    }
}

// ---------------------------------------------------------------------------
// 10: change functions

#[test]
fn criterion_10_change_function_fidelity() {
    let _g = serial();
    let horizon = 1000;
    let value = |schedule: Schedule, f: ChangeFn, tt: u64| -> f64 {
        let process = ThetaProcess::Scheduled { schedule, fns: vec![f] };
        process.scheduled_value(tt, tt / horizon as u64, (tt % horizon as u64) as usize).unwrap()[0]
    };
    type Case = (&'static str, Schedule, ChangeFn, fn(u64) -> f64);
    let cases: Vec<Case> = vec![
        ("f_w continuous", Schedule::Continuous, ChangeFn::Sine { offset: 10.0, amp: 10.0, freq: 0.005 }, |t| {
            10.0 + 10.0 * (0.005 * t as f64).sin()
        }),
        ("f_w across-episode sine", Schedule::AcrossEpisode, ChangeFn::Sine { offset: 10.0, amp: 10.0, freq: 0.5 }, |t| {
            10.0 + 10.0 * (0.5 * (t / 1000) as f64).sin()
        }),
        (
            "f_w damped",
            Schedule::AcrossEpisode,
            ChangeFn::DampedSine { offset: 10.0, amp: 3.0, base: 1.01, decay_block: 10, freq: 0.5 },
            |t| {
                let i = (t / 1000) as f64;
                10.0 + 3.0 * 1.01f64.powf(-(i / 10.0).ceil()) * (0.5 * i).sin()
            },
        ),
        (
            "f_w piecewise linear",
            Schedule::AcrossEpisode,
            ChangeFn::PiecewiseLinear { offset: 5.0, slope: 0.02, center: 1500.0 },
            |t| 5.0 + 0.02 * ((t / 1000) as f64 - 1500.0).abs(),
        ),
        ("f_w within-episode", Schedule::WithinEpisode { period: 10 }, ChangeFn::Sine { offset: 10.0, amp: 10.0, freq: 0.4 }, |t| {
            10.0 + 10.0 * (0.4 * ((t % 1000) / 10) as f64).sin()
        }),
        ("v_g", Schedule::AcrossEpisode, ChangeFn::Sine { offset: 1.5, amp: 1.5, freq: 0.2 }, |t| {
            1.5 + 1.5 * (0.2 * (t / 1000) as f64).sin()
        }),
        ("sawyer x", Schedule::AcrossEpisode, ChangeFn::AbsCosine { offset: 0.0, amp: 0.1, freq: 0.2 }, |t| {
            0.1 * (0.2 * (t / 1000) as f64).cos().abs()
        }),
        ("sawyer y", Schedule::AcrossEpisode, ChangeFn::Sine { offset: 0.0, amp: 0.1, freq: 0.5 }, |t| {
            0.1 * (0.5 * (t / 1000) as f64).sin()
        }),
        ("sawyer z", Schedule::AcrossEpisode, ChangeFn::Constant { c: 0.2 }, |_| 0.2),
        ("m_t continuous", Schedule::Continuous, ChangeFn::Sine { offset: 1.0, amp: 0.75, freq: 0.005 }, |t| {
            1.0 + 0.75 * (0.005 * t as f64).sin()
        }),
        ("m_t within-episode", Schedule::WithinEpisode { period: 20 }, ChangeFn::Sine { offset: 1.0, amp: 0.75, freq: 0.3 }, |t| {
            1.0 + 0.75 * (0.3 * ((t % 1000) / 20) as f64).sin()
        }),
        ("m_i", Schedule::AcrossEpisode, ChangeFn::Sine { offset: 1.0, amp: 0.5, freq: 0.5 }, |t| {
            1.0 + 0.5 * (0.5 * (t / 1000) as f64).sin()
        }),
        ("s_v", Schedule::AcrossEpisode, ChangeFn::Sine { offset: 0.3, amp: 0.2, freq: 0.5 }, |t| {
            0.3 + 0.2 * (0.5 * (t / 1000) as f64).sin()
        }),
    ];
    let mut worst = 0.0f64;
    let mut worst_case = "";
    for (name, schedule, f, formula) in &cases {
        // 1,000 points: lifetime steps 0..1000 for step-indexed schedules,
        // episode starts 0..1000 (up to 3,000 for the piecewise centre) otherwise
        let stride: u64 = match schedule {
            Schedule::AcrossEpisode => 3 * horizon as u64,
            _ => 1,
        };
        for k in 0..1000u64 {
            let tt = k * stride + if stride > 1 { 7 } else { 0 };
            let err = (value(schedule.clone(), f.clone(), tt) - formula(tt)).abs();
            if err > worst {
                worst = err;
                worst_case = name;
            }
        }
    }
    let pass = worst <= 1e-12;
    let detail = format!("{} formulas × 1,000 points, worst absolute error {worst:.1e} ({worst_case}) (limit 1e-12)", cases.len());
    report(10, "change-function fidelity", pass, &detail);
}

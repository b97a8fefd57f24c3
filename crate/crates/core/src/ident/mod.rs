//! Causal-graph recovery from trajectories by conditional-independence
//! testing, with observed change factors (full) or with the lifetime index
//! as their surrogate (partial).
//!
//! Every edge is decided by one test with a fixed conditioning set; there is
//! no search. Rows are indexed by within-episode step `k`, and `s(k-1)` means
//! the state one step earlier in the same episode.

pub mod ci;

use std::collections::{BTreeMap, HashMap};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::graph::{Dims, FnMdpGraph};
use crate::rng::substream;
use ci::{block_f_test, fisher_z_pvalue, permutation_pvalue, required_samples, residual_correlation, Residualizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CiTest {
    PartialCorrelation,
    PermutationPartialCorrelation { n_perm: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiConfig {
    pub test: CiTest,
    pub alpha: f64,
    pub min_samples: usize,
    /// Frequencies of the sin/cos features of the lifetime-index surrogate.
    pub surrogate_freqs: Vec<f64>,
    /// Seed for permutation tests.
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            test: CiTest::PartialCorrelation,
            alpha: 0.01,
            min_samples: 50,
            surrogate_freqs: vec![0.005, 0.011, 0.023],
            seed: 0,
        }
    }
}

impl CiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.min_samples < 50 {
            return Err(Error::config("min_samples must be at least 50"));
        }
        if let CiTest::PermutationPartialCorrelation { n_perm: 0 } = self.test {
            return Err(Error::config("permutation test needs n_perm ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentMode {
    Full,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentResult {
    pub mode: IdentMode,
    /// In partial mode the latent dimensions are unknown and `p = q = 0`.
    pub recovered: FnMdpGraph,
    pub change_affected: Vec<bool>,
    pub reward_nonstationary: bool,
    /// `false` in partial mode: the θ→θ blocks cannot be recovered.
    pub ctt_identified: bool,
    pub ridge_fallbacks: usize,
    pub pvalue_table: BTreeMap<String, f64>,
}

/// SHD restricted to the blocks recoverable without observing θ
/// (state→state, action→state, state→reward, action→reward).
pub fn shd_observed(a: &FnMdpGraph, b: &FnMdpGraph) -> Result<usize> {
    if (a.dims.d, a.dims.m) != (b.dims.d, b.dims.m) {
        return Err(Error::contract("observed-block SHD needs equal state and action dims"));
    }
    let diff = |x: &[Vec<bool>], y: &[Vec<bool>]| -> usize {
        x.iter().flatten().zip(y.iter().flatten()).filter(|(u, v)| u != v).count()
    };
    let vdiff = |x: &[bool], y: &[bool]| x.iter().zip(y).filter(|(u, v)| u != v).count();
    Ok(diff(&a.css, &b.css) + diff(&a.cas, &b.cas) + vdiff(&a.csr, &b.csr) + vdiff(&a.car, &b.car))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum V {
    S(usize),
    A(usize),
    R,
    Ts(usize),
    Tr(usize),
    /// Surrogate feature of the lifetime index.
    B(usize),
}

type Lag = (V, isize);

struct Panel<'a> {
    trajs: &'a [Trajectory],
    rows: Vec<(usize, usize)>,
    freqs: &'a [f64],
    t_max: f64,
}

impl<'a> Panel<'a> {
    /// Rows `k` with `k − back ≥ 0` and `k + fwd < len`.
    fn new(trajs: &'a [Trajectory], back: usize, fwd: usize, freqs: &'a [f64]) -> Self {
        let mut rows = Vec::new();
        for (ti, tr) in trajs.iter().enumerate() {
            for k in back..tr.len().saturating_sub(fwd) {
                rows.push((ti, k));
            }
        }
        let t_max = trajs
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.t_tilde))
            .max()
            .unwrap_or(1)
            .max(1) as f64;
        Self { trajs, rows, freqs, t_max }
    }

    fn column(&self, (v, off): Lag) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&(ti, k)| {
                let st = &self.trajs[ti].steps[(k as isize + off) as usize];
                match v {
                    V::S(i) => st.s[i],
                    V::A(i) => st.a[i],
                    V::R => st.r,
                    V::Ts(i) => st.theta_s[i],
                    V::Tr(i) => st.theta_r[i],
                    V::B(0) => st.t_tilde as f64 / self.t_max,
                    V::B(j) => {
                        let w = self.freqs[(j - 1) / 2];
                        let x = w * st.t_tilde as f64;
                        if j % 2 == 1 {
                            x.sin()
                        } else {
                            x.cos()
                        }
                    }
                }
            })
            .collect()
    }
}

fn lag_name((v, off): Lag) -> String {
    let t = match off {
        0 => "t".to_string(),
        o if o > 0 => format!("t+{o}"),
        o => format!("t{o}"),
    };
    match v {
        V::S(i) => format!("s{i}({t})"),
        V::A(i) => format!("a{i}({t})"),
        V::R => format!("r({t})"),
        V::Ts(i) => format!("theta_s{i}({t})"),
        V::Tr(i) => format!("theta_r{i}({t})"),
        V::B(j) => format!("time{j}({t})"),
    }
}

struct Battery<'c> {
    cfg: &'c CiConfig,
    rng: ChaCha8Rng,
    pvalues: BTreeMap<String, f64>,
    ridge: usize,
}

impl<'c> Battery<'c> {
    fn check_power(&self, n: usize, k: usize) -> Result<()> {
        let required = required_samples(self.cfg.min_samples, k);
        if n < required {
            return Err(Error::UnderPowered { required, available: n });
        }
        Ok(())
    }

    /// Tests every `(label, x, y)` pair against one shared conditioning set
    /// and returns which pairs are dependent at level alpha.
    fn family(&mut self, panel: &Panel, z: &[Lag], pairs: &[(String, Lag, Lag)]) -> Result<Vec<bool>> {
        let n = panel.rows.len();
        self.check_power(n, z.len())?;
        let zcols: Vec<Vec<f64>> = z.iter().map(|&l| panel.column(l)).collect();
        let res = Residualizer::new(&zcols, n)?;
        if res.ridge_used() {
            self.ridge += 1;
        }
        let zdesc: Vec<String> = z.iter().map(|&l| lag_name(l)).collect();
        let zdesc = zdesc.join(",");
        let mut cache: HashMap<Lag, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(pairs.len());
        for (label, x, y) in pairs {
            for l in [*x, *y] {
                cache.entry(l).or_insert_with(|| res.residual(&panel.column(l)));
            }
            let (rx, ry) = (&cache[x], &cache[y]);
            let p = match self.cfg.test {
                CiTest::PartialCorrelation => fisher_z_pvalue(residual_correlation(rx, ry), n, z.len()),
                CiTest::PermutationPartialCorrelation { n_perm } => permutation_pvalue(rx, ry, n_perm, &mut self.rng),
            };
            let key = format!("{label}: {} ~ {} | {zdesc}", lag_name(*x), lag_name(*y));
            self.pvalues.insert(key, p);
            out.push(p < self.cfg.alpha);
        }
        Ok(out)
    }

    /// Block F-test of `y` against the surrogate features given `z`.
    fn time_dependence(&mut self, panel: &Panel, label: &str, y: Lag, z: &[Lag]) -> Result<bool> {
        let nb = 1 + 2 * panel.freqs.len();
        let n = panel.rows.len();
        self.check_power(n, z.len() + nb)?;
        let xs: Vec<Vec<f64>> = (0..nb).map(|j| panel.column((V::B(j), 0))).collect();
        let zs: Vec<Vec<f64>> = z.iter().map(|&l| panel.column(l)).collect();
        let (p, ridge) = block_f_test(&panel.column(y), &xs, &zs)?;
        if ridge {
            self.ridge += 1;
        }
        let zdesc: Vec<String> = z.iter().map(|&l| lag_name(l)).collect();
        self.pvalues.insert(format!("{label}: {} ~ time | {}", lag_name(y), zdesc.join(",")), p);
        Ok(p < self.cfg.alpha)
    }
}

fn observed_dims(trajs: &[Trajectory], need_theta: bool) -> Result<Dims> {
    let first = trajs
        .iter()
        .find_map(|t| t.steps.first())
        .ok_or_else(|| Error::contract("identification needs at least one step"))?;
    let dims = Dims { d: first.s.len(), m: first.a.len(), p: first.theta_s.len(), q: first.theta_r.len() };
    for st in trajs.iter().flat_map(|t| &t.steps) {
        if st.s.len() != dims.d || st.a.len() != dims.m || st.theta_s.len() != dims.p || st.theta_r.len() != dims.q {
            return Err(Error::contract("trajectories disagree on dimensions"));
        }
    }
    if need_theta && dims.p + dims.q == 0 {
        return Err(Error::contract("full identification needs recorded change factors"));
    }
    Ok(dims)
}

fn all(n: usize, f: impl Fn(usize) -> V, off: isize) -> Vec<Lag> {
    (0..n).map(|i| (f(i), off)).collect()
}

fn theta_at(dims: Dims, off: isize) -> Vec<Lag> {
    let mut v = all(dims.p, V::Ts, off);
    v.extend(all(dims.q, V::Tr, off));
    v
}

fn basis_at(freqs: &[f64], off: isize) -> Vec<Lag> {
    all(1 + 2 * freqs.len(), V::B, off)
}

/// Pairs for the state/action → state and → reward families.
fn mdp_pairs(dims: Dims, x_off_state: isize) -> (Vec<(String, Lag, Lag)>, Vec<(String, Lag, Lag)>) {
    let mut trans = Vec::new();
    for i in 0..dims.d {
        for j in 0..dims.d {
            trans.push((format!("css[{i}][{j}]"), (V::S(j), x_off_state), (V::S(i), 0)));
        }
        for l in 0..dims.m {
            trans.push((format!("cas[{i}][{l}]"), (V::A(l), x_off_state), (V::S(i), 0)));
        }
    }
    let mut rew = Vec::new();
    for j in 0..dims.d {
        rew.push((format!("csr[{j}]"), (V::S(j), 0), (V::R, 0)));
    }
    for l in 0..dims.m {
        rew.push((format!("car[{l}]"), (V::A(l), 0), (V::R, 0)));
    }
    (trans, rew)
}

fn fill_mdp_blocks(g: &mut FnMdpGraph, trans: &[bool], rew: &[bool]) {
    let Dims { d, m, .. } = g.dims;
    let mut it = trans.iter();
    for i in 0..d {
        for j in 0..d {
            g.css[i][j] = *it.next().expect("css decision");
        }
        for l in 0..m {
            g.cas[i][l] = *it.next().expect("cas decision");
        }
    }
    g.csr.copy_from_slice(&rew[..d]);
    g.car.copy_from_slice(&rew[d..d + m]);
}

/// Recovers every mask from trajectories that record θ.
///
/// Conditioning sets, with `k` the row of the child variable:
/// - `s(k-1), a(k-1) → s(k)`: θ(k), θ(k-1), s(k-2), a(k-2)
/// - `s(k), a(k) → r(k)`: θ(k+1), θ(k), s(k-1), a(k-1)
/// - `θ(k-1) → θ(k)`: θ(k-2)
/// - `θˢ(k) → s(k)`: s(k-1), a(k-1), θ(k-1)
pub fn identify_full(trajs: &[Trajectory], cfg: &CiConfig) -> Result<IdentResult> {
    cfg.validate()?;
    let dims = observed_dims(trajs, true)?;
    let mut bat = Battery { cfg, rng: substream(cfg.seed, "ci-permutation"), pvalues: BTreeMap::new(), ridge: 0 };
    let mut g = FnMdpGraph::empty(dims);
    let (trans, rew) = mdp_pairs(dims, -1);

    let panel = Panel::new(trajs, 2, 0, &cfg.surrogate_freqs);
    let mut z = theta_at(dims, 0);
    z.extend(theta_at(dims, -1));
    z.extend(all(dims.d, V::S, -2));
    z.extend(all(dims.m, V::A, -2));
    let dt = bat.family(&panel, &z, &trans)?;

    let panel = Panel::new(trajs, 1, 1, &cfg.surrogate_freqs);
    let mut z = theta_at(dims, 1);
    z.extend(theta_at(dims, 0));
    z.extend(all(dims.d, V::S, -1));
    z.extend(all(dims.m, V::A, -1));
    let dr = bat.family(&panel, &z, &rew)?;
    fill_mdp_blocks(&mut g, &dt, &dr);

    let panel = Panel::new(trajs, 2, 0, &cfg.surrogate_freqs);
    let z = theta_at(dims, -2);
    let mut pairs = Vec::new();
    for j in 0..dims.p {
        for k in 0..dims.p {
            pairs.push((format!("ctt_s[{j}][{k}]"), (V::Ts(k), -1), (V::Ts(j), 0)));
        }
    }
    for j in 0..dims.q {
        for k in 0..dims.q {
            pairs.push((format!("ctt_r[{j}][{k}]"), (V::Tr(k), -1), (V::Tr(j), 0)));
        }
    }
    if !pairs.is_empty() {
        let dec = bat.family(&panel, &z, &pairs)?;
        let mut it = dec.into_iter();
        for row in g.ctt_s.iter_mut().chain(g.ctt_r.iter_mut()) {
            for e in row.iter_mut() {
                *e = it.next().expect("ctt decision");
            }
        }
    }

    if dims.p > 0 {
        let panel = Panel::new(trajs, 1, 0, &cfg.surrogate_freqs);
        let mut z = all(dims.d, V::S, -1);
        z.extend(all(dims.m, V::A, -1));
        z.extend(theta_at(dims, -1));
        let mut pairs = Vec::new();
        for i in 0..dims.d {
            for k in 0..dims.p {
                pairs.push((format!("cts[{i}][{k}]"), (V::Ts(k), 0), (V::S(i), 0)));
            }
        }
        let dec = bat.family(&panel, &z, &pairs)?;
        for i in 0..dims.d {
            for k in 0..dims.p {
                g.cts[i][k] = dec[i * dims.p + k];
            }
        }
    }

    let change_affected = g.cts_row_support();
    // θʳ is fully connected to the reward, so the reward is non-stationary
    // exactly when some θʳ dimension actually varies.
    let reward_nonstationary = (0..dims.q).any(|l| {
        let mut vals = trajs.iter().flat_map(|t| t.steps.iter().map(move |s| s.theta_r[l]));
        let first = vals.next();
        first.is_some_and(|f| vals.any(|v| v != f))
    });
    Ok(IdentResult {
        mode: IdentMode::Full,
        recovered: g,
        change_affected,
        reward_nonstationary,
        ctt_identified: true,
        ridge_fallbacks: bat.ridge,
        pvalue_table: bat.pvalues,
    })
}

/// Recovers the state/action→state and →reward masks, which states are
/// affected by change factors, and whether the reward changes, using the
/// lifetime index (through smooth surrogate features) in place of θ.
pub fn identify_partial(trajs: &[Trajectory], cfg: &CiConfig) -> Result<IdentResult> {
    cfg.validate()?;
    let full = observed_dims(trajs, false)?;
    let dims = Dims { d: full.d, m: full.m, p: 0, q: 0 };
    let freqs = &cfg.surrogate_freqs;
    let mut bat = Battery { cfg, rng: substream(cfg.seed, "ci-permutation"), pvalues: BTreeMap::new(), ridge: 0 };
    let mut g = FnMdpGraph::empty(dims);
    let (trans, rew) = mdp_pairs(dims, -1);

    let panel = Panel::new(trajs, 2, 0, freqs);
    let mut z = basis_at(freqs, 0);
    z.extend(all(dims.d, V::S, -2));
    z.extend(all(dims.m, V::A, -2));
    let dt = bat.family(&panel, &z, &trans)?;

    let panel = Panel::new(trajs, 1, 0, freqs);
    let mut z = basis_at(freqs, 0);
    z.extend(all(dims.d, V::S, -1));
    z.extend(all(dims.m, V::A, -1));
    let dr = bat.family(&panel, &z, &rew)?;
    fill_mdp_blocks(&mut g, &dt, &dr);

    let mut prev = all(dims.d, V::S, -1);
    prev.extend(all(dims.m, V::A, -1));
    let change_affected = (0..dims.d)
        .map(|i| bat.time_dependence(&panel, &format!("change_affected[{i}]"), (V::S(i), 0), &prev))
        .collect::<Result<Vec<_>>>()?;

    let panel = Panel::new(trajs, 0, 0, freqs);
    let mut cur = all(dims.d, V::S, 0);
    cur.extend(all(dims.m, V::A, 0));
    let reward_nonstationary = bat.time_dependence(&panel, "reward_nonstationary", (V::R, 0), &cur)?;

    Ok(IdentResult {
        mode: IdentMode::Partial,
        recovered: g,
        change_affected,
        reward_nonstationary,
        ctt_identified: false,
        ridge_fallbacks: bat.ridge,
        pvalue_table: bat.pvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_fnmdp_graph, NodeKind, UnrolledDbn};

    /// Maps a data-time variable at row offset `off` onto the unrolled DBN,
    /// where the reward of row `k` is the reward node of slice `k+1`.
    fn dbn_node(u: &UnrolledDbn, (v, off): Lag, k: usize) -> usize {
        let t = (k as isize + off) as usize;
        match v {
            V::S(i) => u.node(NodeKind::State(i), t),
            V::A(i) => u.node(NodeKind::Action(i), t),
            V::R => u.node(NodeKind::Reward, t + 1),
            V::Ts(i) => u.node(NodeKind::ThetaS(i), t),
            V::Tr(i) => u.node(NodeKind::ThetaR(i), t),
            V::B(_) => unreachable!(),
        }
    }

    /// Every full-mode test is a d-separation query whose answer is "not
    /// separated" exactly when the tested edge exists.
    #[test]
    fn full_mode_tests_match_d_separation() {
        for seed in 0..40 {
            let dims = Dims { d: 3, m: 1, p: 2, q: 1 };
            let g = random_fnmdp_graph(seed, dims, 0.5).unwrap();
            let u = UnrolledDbn::new(&g, 7).unwrap();
            let k = 3;
            let check = |z: Vec<Lag>, x: Lag, y: Lag, expect: bool| {
                let zs: Vec<usize> = z.iter().map(|&l| dbn_node(&u, l, k)).collect();
                let sep = u.d_separated(&[dbn_node(&u, x, k)], &[dbn_node(&u, y, k)], &zs).unwrap();
                assert_eq!(!sep, expect, "seed {seed}: {} ~ {}", lag_name(x), lag_name(y));
            };
            let (trans, rew) = mdp_pairs(dims, -1);
            let mut z = theta_at(dims, 0);
            z.extend(theta_at(dims, -1));
            z.extend(all(dims.d, V::S, -2));
            z.extend(all(dims.m, V::A, -2));
            for (idx, (_, x, y)) in trans.iter().enumerate() {
                let (i, rest) = (idx / (dims.d + dims.m), idx % (dims.d + dims.m));
                let expect = if rest < dims.d { g.css[i][rest] } else { g.cas[i][rest - dims.d] };
                check(z.clone(), *x, *y, expect);
            }
            let mut z = theta_at(dims, 1);
            z.extend(theta_at(dims, 0));
            z.extend(all(dims.d, V::S, -1));
            z.extend(all(dims.m, V::A, -1));
            for (idx, (_, x, y)) in rew.iter().enumerate() {
                let expect = if idx < dims.d { g.csr[idx] } else { g.car[idx - dims.d] };
                check(z.clone(), *x, *y, expect);
            }
            for j in 0..dims.p {
                for kk in 0..dims.p {
                    check(theta_at(dims, -2), (V::Ts(kk), -1), (V::Ts(j), 0), g.ctt_s[j][kk]);
                }
            }
            let mut z = all(dims.d, V::S, -1);
            z.extend(all(dims.m, V::A, -1));
            z.extend(theta_at(dims, -1));
            for i in 0..dims.d {
                for kk in 0..dims.p {
                    check(z.clone(), (V::Ts(kk), 0), (V::S(i), 0), g.cts[i][kk]);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(CiConfig { alpha: 1.0, ..CiConfig::default() }.validate().is_err());
        assert!(CiConfig { min_samples: 10, ..CiConfig::default() }.validate().is_err());
        assert!(CiConfig::default().validate().is_ok());
    }
}

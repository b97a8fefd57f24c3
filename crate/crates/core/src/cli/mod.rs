//! Command-line harness: experiment configs, subcommands and artifact output.
//!
//! Exit codes: 0 on success, 1 on a config or input error, 2 on a numerical
//! failure or a failed invariant.

mod reference;
mod validate;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{write_container, Array, Section};
use crate::driver::{
    env_changepoints, run_many, summarize, theta_samples, analysis::theta_distance_matrix, Method, RunConfig,
    RunMetrics, RunMode,
};
use crate::env::{
    collect_trajectories, make_tracking_env, random_bench_env, read_jsonl, BenchConfig, EnvSpec, TrackingConfig,
    UniformPolicy,
};
use crate::error::{Error, Result};
use crate::fnvae::{train_fnvae, ArchConfig, ChangeMode, FnVae, TrainConfig};
use crate::graph::{compact_representation, shd};
use crate::ident::{identify_full, identify_partial, shd_observed, CiConfig, IdentMode};
use crate::rng::subseed;
use crate::sac::SacConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Tracking(TrackingConfig),
    Bench(BenchConfig),
    /// A fully written-out environment.
    Custom { spec: EnvSpec },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Tracking(TrackingConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<EnvSpec> {
        match self {
            EnvConfig::Tracking(c) => make_tracking_env(c),
            EnvConfig::Bench(c) => random_bench_env(c),
            EnvConfig::Custom { spec } => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentSection {
    pub mode: IdentMode,
    /// Episodes simulated under a uniform policy when no dataset is given.
    pub episodes: usize,
    /// JSON-lines trajectory file used instead of simulation.
    pub data: Option<PathBuf>,
    pub ci: CiConfig,
}

impl Default for IdentSection {
    fn default() -> Self {
        Self { mode: IdentMode::Full, episodes: 100, data: None, ci: CiConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnvaeSection {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Episodes of uniform-policy data for offline training.
    pub episodes: usize,
    /// Change handling in offline training.
    pub mode: RunMode,
}

impl Default for FnvaeSection {
    fn default() -> Self {
        Self { arch: ArchConfig::default(), train: TrainConfig::default(), episodes: 100, mode: RunMode::Continuous }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ident: IdentSection,
    #[serde(default)]
    pub fnvae: FnvaeSection,
    #[serde(default)]
    pub policy: SacConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            env: EnvConfig::default(),
            ident: IdentSection::default(),
            fnvae: FnvaeSection::default(),
            policy: SacConfig::default(),
            run: RunConfig::default(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document. Syntax and schema errors carry the line
    /// and column of the offending token.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let full = e.to_string();
            let msg = full.rsplit_once(" at line ").map_or(full.as_str(), |(m, _)| m);
            Error::config(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
        })?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "{origin}: schema {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        self.ident.ci.validate()?;
        self.fnvae.arch.validate()?;
        self.fnvae.train.validate()?;
        self.run_config().validate()?;
        self.env.build().map(|_| ())
    }

    /// Driver settings with the model and policy sections folded in.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            arch: self.fnvae.arch.clone(),
            fnvae: self.fnvae.train.clone(),
            sac: self.policy.clone(),
            ..self.run.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canon.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fansrl,
    Oracle,
    Sac,
    Compare,
}

impl ModeArg {
    fn methods(self) -> Vec<Method> {
        match self {
            ModeArg::Fansrl => vec![Method::Fansrl],
            ModeArg::Oracle => vec![Method::Oracle],
            ModeArg::Sac => vec![Method::Sac],
            ModeArg::Compare => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fnmdp", version, about = "Factored non-stationary MDP experiments")]
pub struct Cli {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run with this single root seed instead of the config's list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for seed sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the config reference with every default.
    Schema,
    /// Recover the causal graph from simulated or recorded trajectories.
    Ident,
    /// Train the world model offline and save a checkpoint.
    TrainModel,
    /// Train policies and write per-episode metrics.
    Run {
        #[arg(long, value_enum, default_value_t = ModeArg::Fansrl)]
        mode: ModeArg,
    },
    /// Compare distances between learned and true change factors.
    ThetaAnalysis,
    /// Run the invariant suite.
    Validate,
}

/// Attribution stamped on every output file.
struct Provenance {
    hash: String,
}

impl Provenance {
    fn json(&self, seeds: &[u64]) -> Value {
        let mut h = json!({ "version": VERSION, "config_sha256": self.hash, "schema": SCHEMA_VERSION });
        match seeds {
            [s] => h["seed"] = json!(s),
            _ => h["seeds"] = json!(seeds),
        }
        h
    }

    fn csv_preamble(&self, seed: u64) -> String {
        format!("# fnmdp {VERSION}\n# config_sha256 {}\n# seed {seed}\n", self.hash)
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    prov: Provenance,
    out: PathBuf,
    threads: usize,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, seeds: &[u64], body: Value) -> Result<PathBuf> {
        let mut doc = json!({ "header": self.prov.json(seeds) });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&p, text)?;
        Ok(p)
    }

    fn write_csv(&self, name: &str, seed: u64, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = self.prov.csv_preamble(seed).into_bytes();
        body(&mut buf)?;
        let p = self.path(name);
        fs::write(&p, buf)?;
        Ok(p)
    }

    fn seeds(&self) -> &[u64] {
        &self.cfg.seeds
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text, &p.display().to_string())?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match cli.command {
        Command::Schema => {
            print!("{}", reference::render());
            return Ok(0);
        }
        Command::Validate => return Ok(validate::run(&mut std::io::stdout())),
        _ => {}
    }
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let ctx = Ctx { prov: Provenance { hash: cfg.hash() }, cfg, out, threads: cli.threads.max(1) };
    match cli.command {
        Command::Ident => ident(&ctx)?,
        Command::TrainModel => train_model(&ctx)?,
        Command::Run { mode } => run(&ctx, mode)?,
        Command::ThetaAnalysis => theta_analysis(&ctx)?,
        Command::Schema | Command::Validate => unreachable!("handled above"),
    }
    Ok(0)
}

fn announce(p: &Path) {
    println!("wrote {}", p.display());
}

fn ident(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.env.build()?;
    let sec = &ctx.cfg.ident;
    let full = sec.mode == IdentMode::Full;
    for &seed in ctx.seeds() {
        let (trajs, truth) = match &sec.data {
            Some(path) => {
                let f = fs::File::open(path)
                    .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
                (read_jsonl(std::io::BufReader::new(f))?, None)
            }
            None => {
                let mut policy = UniformPolicy::new(spec.dims().m, subseed(seed, "ident-policy"));
                let t = collect_trajectories(&spec, subseed(seed, "env"), &mut policy, sec.episodes, full)?;
                (t, Some(spec.graph.clone()))
            }
        };
        let ci = CiConfig { seed: subseed(seed, "ci"), ..sec.ci.clone() };
        let result = if full { identify_full(&trajs, &ci)? } else { identify_partial(&trajs, &ci)? };
        let shd_value = match &truth {
            Some(t) if full => Some(shd(t, &result.recovered)?),
            Some(t) => Some(shd_observed(t, &result.recovered)?),
            None => None,
        };
        let body = json!({
            "episodes": trajs.len(),
            "result": result,
            "shd": shd_value,
            "truth": truth,
        });
        announce(&ctx.write_json(&format!("ident_seed{seed}.json"), &[seed], body)?);
        match shd_value {
            Some(v) => println!("seed {seed}: {} edges recovered, SHD {v}", result.recovered.edge_count()),
            None => println!("seed {seed}: {} edges recovered", result.recovered.edge_count()),
        }
    }
    Ok(())
}

fn meta_section(prov: &Provenance, seed: u64) -> Section {
    let digest: Vec<f64> = (0..prov.hash.len() / 2)
        .map(|i| u8::from_str_radix(&prov.hash[2 * i..2 * i + 2], 16).expect("hex digest") as f64)
        .collect();
    let version: Vec<u64> = VERSION.split('.').map(|v| v.parse().unwrap_or(0)).collect();
    let mut header = vec![seed, SCHEMA_VERSION as u64];
    header.extend(version);
    Section {
        tag: "meta".into(),
        header,
        arrays: vec![Array { name: "config_sha256".into(), shape: vec![digest.len()], data: digest }],
    }
}

fn train_model(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.env.build()?;
    let sec = &ctx.cfg.fnvae;
    let dims = spec.dims();
    for &seed in ctx.seeds() {
        let mut policy = UniformPolicy::new(dims.m, subseed(seed, "init-policy"));
        let data = collect_trajectories(&spec, subseed(seed, "env"), &mut policy, sec.episodes, false)?;
        let mode = match sec.mode {
            RunMode::Continuous => ChangeMode::Continuous,
            RunMode::Discrete => {
                let lifetime = data.iter().map(|t| t.len() as u64).sum();
                ChangeMode::Discrete { changepoints: env_changepoints(&spec, lifetime)? }
            }
        };
        let mut model = FnVae::new(dims.d, dims.m, &sec.arch, subseed(seed, "fnvae"))?;
        let report = train_fnvae(&mut model, &data, &mode, &sec.train, true, subseed(seed, "fnvae-train"))?;

        let mut bytes = Vec::new();
        write_container(&mut bytes, &[meta_section(&ctx.prov, seed), model.to_section()])?;
        let ckpt = ctx.path(&format!("fnvae_seed{seed}.ckpt"));
        fs::write(&ckpt, bytes)?;
        announce(&ckpt);

        let p = ctx.write_csv(&format!("fnvae_loss_seed{seed}.csv"), seed, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["epoch", "total", "rec_dyn", "pred_dyn", "rec_rw", "pred_rw", "kl", "sparse", "smooth"])
                .map_err(csv_err)?;
            for (i, r) in report.epochs.iter().enumerate() {
                let row = [i as f64, r.total, r.rec_dyn, r.pred_dyn, r.rec_rw, r.pred_rw, r.kl, r.sparse, r.smooth];
                w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
            }
            w.flush()?;
            Ok(())
        })?;
        announce(&p);

        let learned = model.extract_masks(ctx.cfg.run.mask_threshold);
        let body = json!({
            "graph": learned,
            "compact": compact_representation(&learned),
            "shd_observed": shd_observed(&spec.graph, &learned)?,
            "final_loss": report.epochs.last(),
        });
        announce(&ctx.write_json(&format!("fnvae_graph_seed{seed}.json"), &[seed], body)?);
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_run(ctx: &Ctx, r: &RunMetrics) -> Result<()> {
    let name = r.method.name();
    let p = ctx.write_csv(&format!("{name}_seed{}.csv", r.seed), r.seed, |buf| r.write_csv(buf))?;
    announce(&p);
    let body = json!({
        "method": r.method,
        "input_dim": r.input_dim,
        "compact": r.compact,
        "learned_graph": r.learned_graph,
        "refreshes": r.refreshes,
        "final_mean": r.final_mean(ctx.cfg.run.final_episodes),
    });
    announce(&ctx.write_json(&format!("{name}_seed{}.json", r.seed), &[r.seed], body)?);
    Ok(())
}

fn run(ctx: &Ctx, mode: ModeArg) -> Result<()> {
    let spec = ctx.cfg.env.build()?;
    let cfg = ctx.cfg.run_config();
    let runs = run_many(&mode.methods(), &spec, &cfg, ctx.seeds(), ctx.threads)?;
    for r in &runs {
        write_run(ctx, r)?;
    }
    let summary = summarize(&runs, cfg.final_episodes);
    let name = match mode {
        ModeArg::Compare => "summary.json".to_string(),
        m => format!("{}_summary.json", m.methods()[0].name()),
    };
    announce(&ctx.write_json(&name, ctx.seeds(), json!({ "summary": summary }))?);
    for m in &summary.methods {
        println!("{:<7} final return {:.3} ± {:.3}", m.method.name(), m.mean, m.std);
    }
    Ok(())
}

fn theta_analysis(ctx: &Ctx) -> Result<()> {
    let spec = ctx.cfg.env.build()?;
    let cfg = ctx.cfg.run_config();
    let runs = run_many(&[Method::Fansrl], &spec, &cfg, ctx.seeds(), ctx.threads)?;
    for r in &runs {
        let (learned, truth) = theta_samples(r, cfg.theta_window, cfg.theta_points);
        let (dl, rho) = theta_distance_matrix(&learned, &truth)?;
        let (dt, _) = theta_distance_matrix(&truth, &truth)?;
        let body = json!({
            "learned": learned,
            "truth": truth,
            "learned_distance": dl,
            "true_distance": dt,
            "spearman": rho,
        });
        announce(&ctx.write_json(&format!("theta_seed{}.json", r.seed), &[r.seed], body)?);
        let p = ctx.write_csv(&format!("theta_seed{}.csv", r.seed), r.seed, |buf| {
            let q = r.thetas.first().map_or(0, |t| t.posterior_r.len());
            let k = r.thetas.first().map_or(0, |t| t.true_r.len());
            let mut cols = vec!["episode".to_string()];
            cols.extend((0..q).map(|i| format!("learned_r{i}")));
            cols.extend((0..k).map(|i| format!("true_r{i}")));
            writeln!(buf, "{}", cols.join(","))?;
            for t in &r.thetas {
                let mut row = vec![t.episode.to_string()];
                row.extend(t.posterior_r.iter().chain(&t.true_r).map(|v| v.to_string()));
                writeln!(buf, "{}", row.join(","))?;
            }
            Ok(())
        })?;
        announce(&p);
        println!("seed {}: spearman {rho:.3}", r.seed);
    }
    Ok(())
}

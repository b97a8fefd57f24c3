//! Generated config reference for `fnmdp schema`.

use std::fmt::Write;

use serde_json::Value;

use super::{ExperimentConfig, SCHEMA_VERSION};

const NOTES: &[(&str, &str)] = &[
    ("schema", "config format version; must be 1"),
    ("env.kind", "tracking | bench | custom (custom takes a full environment under `spec`)"),
    ("env.horizon", "steps per episode"),
    ("env.decay", "velocity persistence per step"),
    ("env.gain", "velocity response to the action"),
    ("env.wind_gain", "velocity response to the state change factor"),
    ("env.noise", "transition noise standard deviation"),
    ("env.reward_noise", "reward noise standard deviation"),
    ("env.action_cost", "reward penalty per unit |a|"),
    ("env.wind", "scheduled {schedule, fns} or markov {weights, bias, noise}; drives the state change factor"),
    ("env.target", "process driving the reward change factor (target velocity)"),
    ("env.mechanism_change", "let θ change the mechanism as well as the parameters"),
    ("ident.mode", "full (change factors observed) | partial (lifetime-index surrogate)"),
    ("ident.episodes", "uniform-policy episodes simulated when `data` is null"),
    ("ident.data", "JSON-lines trajectory file to analyse instead of simulating"),
    ("ident.ci.test", "partial_correlation | permutation_partial_correlation {n_perm}"),
    ("ident.ci.alpha", "significance level of every edge test"),
    ("ident.ci.min_samples", "minimum rows per test"),
    ("ident.ci.surrogate_freqs", "sin/cos frequencies of the lifetime-index surrogate"),
    ("ident.ci.seed", "replaced by a value derived from the root seed"),
    ("fnvae.arch.latent_s", "learned state change-factor dimensions"),
    ("fnvae.arch.latent_r", "learned reward change-factor dimensions"),
    ("fnvae.arch.mask_init_logit", "initial logit of every structural mask"),
    ("fnvae.train.epochs", "offline training updates"),
    ("fnvae.train.batch", "windows per update"),
    ("fnvae.train.window", "consecutive steps per window"),
    ("fnvae.train.lr", "Adam learning rate, also used by online refreshes"),
    ("fnvae.train.smoothness", "l1_diff | moving_average {window} | exponential_moving_average {beta}"),
    ("fnvae.train.weights.k", "weights of reconstruction, prediction, KL, sparsity and smoothness"),
    ("fnvae.train.weights.w", "sparsity weights of the blocks s→s, a→s, θˢ→s, s→r, a→r, θˢ→θˢ, θʳ→θʳ"),
    ("fnvae.episodes", "uniform-policy episodes for `train-model`"),
    ("fnvae.mode", "continuous | discrete change handling for `train-model`"),
    ("policy.hidden", "units per hidden layer of actor and critics"),
    ("policy.layers", "hidden layers"),
    ("policy.init_scale", "standard deviation of the initial weights"),
    ("policy.discount", "reward discount"),
    ("policy.polyak", "target-network averaging rate"),
    ("policy.lr", "Adam learning rate of actor, critics and temperature"),
    ("policy.batch", "transitions per update"),
    ("policy.buffer_capacity", "replay buffer size"),
    ("policy.temperature", "learned {init} | fixed {value}"),
    ("policy.target_entropy", "null means minus the action dimension"),
    ("run.episodes", "training episodes per run"),
    ("run.mode", "continuous (θ every step) | discrete (θ at changepoints only)"),
    ("run.n_init", "episodes collected before learning"),
    ("run.init_policy", "uniform | policy"),
    ("run.window", "steps per window in online model refreshes"),
    ("run.refresh_every", "environment steps between model refreshes; 0 disables"),
    ("run.refresh_batch", "windows per model refresh"),
    ("run.updates_per_step", "policy updates per environment step"),
    ("run.eval_every", "episodes between deterministic evaluations; 0 disables"),
    ("run.mask_threshold", "probability above which a learned mask entry is an edge"),
    ("run.smoothing", "trailing episodes in the smoothed return"),
    ("run.theta_err_episodes", "trailing episodes in the θ estimation error"),
    ("run.normalize_inputs", "standardize policy inputs with initial-data moments"),
    ("run.final_episodes", "trailing episodes averaged into the final return"),
    ("run.theta_window", "trailing episodes sampled by `theta-analysis`"),
    ("run.theta_points", "episodes sampled by `theta-analysis`"),
    ("seeds", "root seeds; every random stream derives from one of them"),
    ("output_dir", "directory for artifacts"),
];

const OUTPUTS: &str = "\
Outputs (under output_dir; every file starts with version, config_sha256 and seed):
  ident            ident_seed{N}.json         recovered graph, flags, p-values, SHD
  train-model      fnvae_seed{N}.ckpt         binary checkpoint (sections meta, fnvae)
                   fnvae_loss_seed{N}.csv     epoch,total,rec_dyn,pred_dyn,rec_rw,pred_rw,kl,sparse,smooth
                   fnvae_graph_seed{N}.json   learned graph and compact representation
  run              {method}_seed{N}.csv       episode,return,smoothed,eval_return,shd,theta_err,wall_ms
                   {method}_seed{N}.json      input width, compact representation, learned graph
                   summary.json               per-method mean and std of final returns (compare)
                   {method}_summary.json      the same for a single method
  theta-analysis   theta_seed{N}.json         learned and true distance matrices, Spearman rho
                   theta_seed{N}.csv          episode,learned_r*,true_r*
CSV files begin with `#` comment lines; empty fields mean not measured.

Exit codes: 0 success, 1 config or input error, 2 numerical failure or failed invariant.
";

/// Flattens the default document to dotted keys. Tagged values (objects
/// with a `kind` or `process`) stay whole, except the environment itself.
fn leaves(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v.as_object() {
        Some(map) if !map.is_empty() && !map.contains_key("process")
            && (prefix.is_empty() || prefix == "env" || !map.contains_key("kind")) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(&path, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.to_string())),
    }
}

pub fn render() -> String {
    let defaults = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    let mut rows = Vec::new();
    leaves("", &defaults, &mut rows);
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "fnmdp experiment config, schema {SCHEMA_VERSION}");
    let _ = writeln!(s, "Unknown keys are rejected. Omitted keys take the defaults below.\n");
    for (key, default) in &rows {
        let note = NOTES.iter().find(|(k, _)| k == key).map_or("", |(_, n)| n);
        let _ = writeln!(s, "{key:<width$}  {default}");
        if !note.is_empty() {
            let _ = writeln!(s, "{:<width$}    {note}", "");
        }
    }
    let _ = writeln!(s, "\nDefault document:\n{}\n", serde_json::to_string_pretty(&defaults).expect("serializes"));
    s.push_str(OUTPUTS);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_note_names_a_real_key() {
        let text = render();
        for (k, _) in NOTES {
            assert!(text.lines().any(|l| l.split_whitespace().next() == Some(k)), "{k} missing from reference");
        }
    }
}

//! Experiment runner: seeded trials, exact regret/violation accounting, CSV output.
//!
//! After every backward pass the harness materializes the agent's soft-max
//! policy on the whole tabular state space and evaluates it exactly, so the
//! per-episode regret V* − V^{π_k}_{r,1}(x₁) and violation b − V^{π_k}_{g,1}(x₁)
//! carry no sampling noise. V* is always the optimum for the original
//! threshold b, also when the agent trains against b + ζ.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, RunStreams, Schedule};
use crate::env::{builtin, EnvError, TabularCmdp, TabularEnv};
use crate::linalg::FeatureVector;
use crate::oracle::{policy_eval_dp, slater_margin, solve_occupancy_lp, OracleError, StepPolicy};

/// Column order of the per-trial CSV files.
pub const TRIAL_COLUMNS: [&str; 6] = [
    "episode",
    "cumulative_regret",
    "cumulative_violation_signed",
    "cumulative_violation_positive_part",
    "dual_Y",
    "wall_time_s",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("oracle failed: {0}; refusing to compute regret")]
    Oracle(#[from] OracleError),
    #[error("policy at episode {episode} is feasible but beats the constrained optimum by {excess:e}")]
    OracleInconsistency { episode: usize, excess: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    ZeroViolation,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Mode::Standard),
            "zero_violation" | "zero-violation" => Ok(Mode::ZeroViolation),
            other => Err(format!("unknown mode {other:?} (expected standard or zero_violation)")),
        }
    }
}

/// Agent hyper-parameters that do not depend on the environment's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    /// Slater margin γ assumed by the agent.
    pub gamma: f64,
    pub lambda: f64,
    pub c1: f64,
    pub failure_prob: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
    pub xi: Option<f64>,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 1.0,
            c1: 1.0,
            failure_prob: 0.01,
            alpha: None,
            beta: None,
            eta: None,
            xi: None,
        }
    }
}

/// Full experiment description. Loadable from TOML; see the README for the
/// field reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin environment name; ignored when `env_file` is set.
    pub env: String,
    /// Path to a tabular CMDP JSON file.
    pub env_file: Option<PathBuf>,
    pub episodes: usize,
    /// Explicit seeds, one per trial. When empty, seeds are 0..trials.
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub output: PathBuf,
    pub mode: Mode,
    /// Constraint tightening ζ in zero-violation mode.
    pub zeta: Option<f64>,
    /// Constant ĉ in the default ζ = min{ĉ·√T / K, γ/2}.
    pub zeta_constant: f64,
    /// When false the wall-time column is written as 0 so output is
    /// byte-reproducible.
    pub record_wall_time: bool,
    pub agent: AgentParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "job-scheduler".into(),
            env_file: None,
            episodes: 1000,
            seeds: Vec::new(),
            trials: 1,
            output: PathBuf::from("results"),
            mode: Mode::Standard,
            zeta: None,
            zeta_constant: 1.0,
            record_wall_time: true,
            agent: AgentParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn resolved_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.trials as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn load_model(&self) -> Result<TabularCmdp, HarnessError> {
        Ok(match &self.env_file {
            Some(path) => TabularCmdp::load_json(path)?,
            None => builtin(&self.env)?,
        })
    }

    /// ζ actually used: 0 in standard mode; otherwise the configured value
    /// or min{ĉ·√(KH)/K, γ/2}, never above γ/2.
    pub fn effective_zeta(&self, horizon: usize) -> f64 {
        match self.mode {
            Mode::Standard => 0.0,
            Mode::ZeroViolation => {
                let cap = self.agent.gamma / 2.0;
                let k = self.episodes as f64;
                let requested = self
                    .zeta
                    .unwrap_or(self.zeta_constant * (k * horizon as f64).sqrt() / k);
                if requested > cap {
                    warn!("zeta {requested} exceeds gamma/2 = {cap}; clamping");
                }
                requested.min(cap)
            }
        }
    }

    pub fn agent_config(&self, model: &TabularCmdp) -> AgentConfig {
        let p = &self.agent;
        let mut config = AgentConfig::new(
            model.feature_dim(),
            model.horizon,
            self.episodes,
            model.n_actions,
            p.gamma,
        );
        config.lambda_reg = p.lambda;
        config.c1 = p.c1;
        config.failure_prob = p.failure_prob;
        config.tighten_zeta = self.effective_zeta(model.horizon);
        config.alpha = p.alpha;
        config.beta = p.beta;
        config.eta = p.eta;
        config.xi = p.xi;
        config
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::InvalidConfig("episodes must be positive".into()));
        }
        if self.seeds.is_empty() && self.trials == 0 {
            return Err(HarnessError::InvalidConfig("need at least one trial".into()));
        }
        if self.zeta.is_some_and(|z| !(z >= 0.0)) {
            return Err(HarnessError::InvalidConfig("zeta must be non-negative".into()));
        }
        if self.mode == Mode::Standard && self.zeta.is_some_and(|z| z > 0.0) {
            warn!("zeta is ignored in standard mode");
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub cumulative_regret: f64,
    pub cumulative_violation_signed: f64,
    pub cumulative_violation_positive_part: f64,
    #[serde(rename = "dual_Y")]
    pub dual_y: f64,
    pub wall_time_s: f64,
}

/// Per-trial metrics. `v_reward` / `v_utility` hold the exact values of each
/// episode's policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub v_reward: Vec<f64>,
    pub v_utility: Vec<f64>,
}

impl RunMetrics {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_regret)
    }
}

/// Oracle quantities the run was measured against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub env: String,
    pub mode: Mode,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub zeta: f64,
    pub optimal_value: f64,
    pub true_slater_margin: f64,
    pub gamma: f64,
    pub gamma_exceeds_margin: bool,
    pub c1: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub metadata: RunMetadata,
    pub trials: Vec<RunMetrics>,
    pub summary: Summary,
}

/// Per-state one-hot features of a tabular model, indexed `[s][a]`.
pub fn tabular_features(model: &TabularCmdp) -> Vec<Vec<FeatureVector>> {
    (0..model.n_states)
        .map(|s| {
            (0..model.n_actions)
                .map(|a| model.features_of(s, a).expect("indices in range"))
                .collect()
        })
        .collect()
}

/// The agent's current soft-max policy on every (h, s) of the model.
pub fn snapshot_policy(agent: &Agent, model: &TabularCmdp, features: &[Vec<FeatureVector>]) -> StepPolicy {
    StepPolicy::from_fn(model, |h, s| agent.policy_at(h, &features[s]).into_probs())
        .expect("soft-max rows are distributions")
}

/// (V^{π}_{r,1}(x₁), V^{π}_{g,1}(x₁)) for the agent's current policy.
pub fn evaluate_policy_snapshot(agent: &Agent, model: &TabularCmdp, features: &[Vec<FeatureVector>]) -> (f64, f64) {
    let ev = policy_eval_dp(model, &snapshot_policy(agent, model, features));
    (ev.v_reward_initial, ev.v_utility_initial)
}

/// Runs one seeded trial and returns its metrics.
pub fn run_trial(
    model: &TabularCmdp,
    agent_config: &AgentConfig,
    optimal_value: f64,
    seed: u64,
    record_wall_time: bool,
) -> Result<RunMetrics, HarnessError> {
    let features = tabular_features(model);
    let threshold = model.threshold;
    let mut agent = Agent::new(agent_config.clone(), threshold)?;
    let mut env = TabularEnv::new(model.clone());
    let mut streams = RunStreams::from_seed(seed);
    let start = Instant::now();

    let episodes = agent_config.episodes;
    let mut records = Vec::with_capacity(episodes);
    let mut v_reward = Vec::with_capacity(episodes);
    let mut v_utility = Vec::with_capacity(episodes);
    let mut regret = 0.0;
    let mut violation = 0.0;
    for _ in 0..episodes {
        let mut snapshot = (0.0, 0.0);
        let trace = agent.run_episode_with(&mut env, &mut streams, |a| {
            snapshot = evaluate_policy_snapshot(a, model, &features);
        })?;
        let (vr, vg) = snapshot;
        if vg >= threshold && vr > optimal_value + 1e-6 {
            return Err(HarnessError::OracleInconsistency {
                episode: trace.episode,
                excess: vr - optimal_value,
            });
        }
        regret += optimal_value - vr;
        violation += threshold - vg;
        v_reward.push(vr);
        v_utility.push(vg);
        records.push(EpisodeRecord {
            episode: trace.episode,
            cumulative_regret: regret,
            cumulative_violation_signed: violation,
            cumulative_violation_positive_part: violation.max(0.0),
            dual_y: trace.dual_before,
            wall_time_s: if record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(RunMetrics {
        seed,
        records,
        v_reward,
        v_utility,
    })
}

/// Loads the environment, checks the oracle, runs all trials in parallel.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let model = config.load_model()?;
    let agent_config = config.agent_config(&model);
    agent_config.validate()?;

    let margin = slater_margin(&model);
    let gamma_exceeds_margin = config.agent.gamma > margin;
    if gamma_exceeds_margin {
        warn!(
            "configured gamma {} exceeds the true Slater margin {margin:.6}",
            config.agent.gamma
        );
    }
    let optimum = solve_occupancy_lp(&model, model.threshold)?;
    info!(
        "V* = {:.6}, Slater margin = {margin:.6}, zeta = {}",
        optimum.optimal_value, agent_config.tighten_zeta
    );

    let seeds = config.resolved_seeds();
    let trials = seeds
        .par_iter()
        .map(|&seed| run_trial(&model, &agent_config, optimum.optimal_value, seed, config.record_wall_time))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&trials);

    let metadata = RunMetadata {
        env: match &config.env_file {
            Some(p) => p.display().to_string(),
            None => config.env.clone(),
        },
        mode: config.mode,
        episodes: config.episodes,
        seeds,
        threshold: model.threshold,
        zeta: agent_config.tighten_zeta,
        optimal_value: optimum.optimal_value,
        true_slater_margin: margin,
        gamma: config.agent.gamma,
        gamma_exceeds_margin,
        c1: agent_config.c1,
        schedule: agent_config.schedule(),
    };
    Ok(ExperimentResult {
        metadata,
        trials,
        summary,
    })
}

/// Cross-trial statistics per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub episode: usize,
    pub cumulative_regret_mean: f64,
    pub cumulative_regret_std: f64,
    pub cumulative_violation_signed_mean: f64,
    pub cumulative_violation_signed_std: f64,
    pub cumulative_violation_positive_part_mean: f64,
    pub cumulative_violation_positive_part_std: f64,
    #[serde(rename = "dual_Y_mean")]
    pub dual_y_mean: f64,
    #[serde(rename = "dual_Y_std")]
    pub dual_y_std: f64,
    pub wall_time_s_mean: f64,
    pub wall_time_s_std: f64,
    /// Mean cumulative regret divided by √k.
    pub regret_over_sqrt_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Mean Regret(K) / mean Regret(⌊K/2⌋); `None` when K < 2 or the
    /// denominator is zero.
    pub halving_ratio: Option<f64>,
}

/// Mean and population standard deviation.
fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates trials episode by episode. Trials must have equal length.
pub fn summarize(trials: &[RunMetrics]) -> Summary {
    assert!(!trials.is_empty(), "summarize needs at least one trial");
    let episodes = trials[0].records.len();
    assert!(
        trials.iter().all(|t| t.records.len() == episodes),
        "trials have different lengths"
    );
    let rows: Vec<SummaryRow> = (0..episodes)
        .map(|i| {
            let col = |f: fn(&EpisodeRecord) -> f64| mean_std(trials.iter().map(move |t| f(&t.records[i])));
            let (rm, rs) = col(|r| r.cumulative_regret);
            let (vm, vs) = col(|r| r.cumulative_violation_signed);
            let (pm, ps) = col(|r| r.cumulative_violation_positive_part);
            let (dm, ds) = col(|r| r.dual_y);
            let (wm, ws) = col(|r| r.wall_time_s);
            let episode = trials[0].records[i].episode;
            SummaryRow {
                episode,
                cumulative_regret_mean: rm,
                cumulative_regret_std: rs,
                cumulative_violation_signed_mean: vm,
                cumulative_violation_signed_std: vs,
                cumulative_violation_positive_part_mean: pm,
                cumulative_violation_positive_part_std: ps,
                dual_y_mean: dm,
                dual_y_std: ds,
                wall_time_s_mean: wm,
                wall_time_s_std: ws,
                regret_over_sqrt_k: rm / (episode as f64).sqrt(),
            }
        })
        .collect();
    let halving_ratio = if episodes >= 2 {
        let full = rows[episodes - 1].cumulative_regret_mean;
        let half = rows[episodes / 2 - 1].cumulative_regret_mean;
        (half != 0.0).then(|| full / half)
    } else {
        None
    };
    Summary { rows, halving_ratio }
}

pub fn trial_file_name(index: usize, seed: u64) -> String {
    format!("trial_{index:03}_seed_{seed}.csv")
}

pub fn write_trial_csv<W: std::io::Write>(metrics: &RunMetrics, out: W) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for record in &metrics.records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: std::io::Write>(summary: &Summary, out: W) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in &summary.rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes one CSV per trial, `aggregate.csv` and `run.json` into `dir`.
/// Returns the paths written.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, trial) in result.trials.iter().enumerate() {
        let path = dir.join(trial_file_name(i, trial.seed));
        write_trial_csv(trial, fs::File::create(&path)?)?;
        written.push(path);
    }
    let path = dir.join("aggregate.csv");
    write_summary_csv(&result.summary, fs::File::create(&path)?)?;
    written.push(path);
    let path = dir.join("run.json");
    let meta = serde_json::json!({
        "metadata": result.metadata,
        "halving_ratio": result.summary.halving_ratio,
    });
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("metadata serializes"))?;
    written.push(path);
    Ok(written)
}

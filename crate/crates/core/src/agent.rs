//! Primal-dual soft-max LSVI-UCB.
//!
//! Each episode the agent
//! 1. runs least-squares value iteration backwards over the horizon, fitting
//!    reward and utility weights by ridge regression on targets
//!    `r + V_{h+1}(x')` and `g + V_{h+1}(x')`, with an optimism bonus
//!    β·√(φᵀΛ⁻¹φ) and clipping at H;
//! 2. acts with the soft-max policy over the composite value `Q_r + Y·Q_g`;
//! 3. after the episode, folds the visited features into the Gram inverses
//!    (Sherman-Morrison) and takes a projected dual step on Y.
//!
//! Successor values are recomputed at every stored next state each episode.
//! Transitions that share a next state share the value `V_{h+1}(x')`, so the
//! regression right-hand side Σ_τ φ_τ·V(x'_τ) is accumulated per distinct
//! next state as V(x')·Σ_{τ: x'_τ = x'} φ_τ. The result is the same sum; only
//! the grouping changes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{sample_index, EnvError, Environment, EpisodeStep, StateId};
use crate::linalg::{
    bonus_quadratic_form, ridge_solve, FeatureVector, GramInverse, LinalgError, Objective,
    RidgeAccumulator,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("environment does not match agent configuration: {0}")]
    EnvironmentMismatch(String),
    #[error("all {0} configured episodes have been played")]
    EpisodesExhausted(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Hyper-parameters of the agent. `None` overrides mean "derive from the
/// theoretical schedule" (see [`AgentConfig::schedule`]).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentConfig {
    pub feature_dim: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub n_actions: usize,
    pub lambda_reg: f64,
    /// Absolute constant in front of the bonus scale β.
    pub c1: f64,
    pub failure_prob: f64,
    pub slater_gamma: f64,
    /// Constraint tightening ζ; any positive value selects zero-violation mode.
    pub tighten_zeta: f64,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub xi: Option<f64>,
}

/// Resolved step sizes and scales.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Schedule {
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
    pub xi: f64,
    pub iota: f64,
}

impl AgentConfig {
    pub fn new(feature_dim: usize, horizon: usize, episodes: usize, n_actions: usize, slater_gamma: f64) -> Self {
        Self {
            feature_dim,
            horizon,
            episodes,
            n_actions,
            lambda_reg: 1.0,
            c1: 1.0,
            failure_prob: 0.01,
            slater_gamma,
            tighten_zeta: 0.0,
            alpha: None,
            eta: None,
            beta: None,
            xi: None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |msg: &str| Err(AgentError::InvalidConfig(msg.to_string()));
        if self.feature_dim == 0 || self.horizon == 0 || self.episodes == 0 || self.n_actions == 0 {
            return fail("feature_dim, horizon, episodes and n_actions must be positive");
        }
        if !(self.lambda_reg > 0.0) {
            return fail("lambda_reg must be positive");
        }
        if !(self.c1 > 0.0) {
            return fail("c1 must be positive");
        }
        if !(self.failure_prob > 0.0 && self.failure_prob < 1.0) {
            return fail("failure_prob must lie in (0, 1)");
        }
        if !(self.slater_gamma > 0.0) {
            return fail("slater_gamma must be positive");
        }
        if !(self.tighten_zeta >= 0.0) || !self.tighten_zeta.is_finite() {
            return fail("tighten_zeta must be a finite non-negative number");
        }
        if self.alpha.is_some_and(|v| !(v > 0.0)) || self.eta.is_some_and(|v| !(v > 0.0)) {
            return fail("alpha and eta overrides must be positive");
        }
        if self.beta.is_some_and(|v| !(v >= 0.0)) || self.xi.is_some_and(|v| !(v >= 0.0)) {
            return fail("beta and xi overrides must be non-negative");
        }
        Ok(())
    }

    pub fn zero_violation(&self) -> bool {
        self.tighten_zeta > 0.0
    }

    /// ξ = 2H/γ (4H/γ under tightening), α = log|A|·K / (2(1 + ξ + H)),
    /// η = ξ/√(K·H²), ι = log(log|A|·4dT/p) with T = K·H, β = c1·d·H·√ι.
    ///
    /// With a single action log|A| = 0; α is then irrelevant and set to 1,
    /// and the log|A| factor is dropped from ι.
    pub fn schedule(&self) -> Schedule {
        let h = self.horizon as f64;
        let k = self.episodes as f64;
        let d = self.feature_dim as f64;
        let log_actions = (self.n_actions as f64).ln();
        let xi_factor = if self.zero_violation() { 4.0 } else { 2.0 };
        let xi = self.xi.unwrap_or(xi_factor * h / self.slater_gamma);
        let alpha = self.alpha.unwrap_or(if self.n_actions > 1 {
            log_actions * k / (2.0 * (1.0 + xi + h))
        } else {
            1.0
        });
        let eta = self.eta.unwrap_or(xi / (k * h * h).sqrt());
        let log_factor = if self.n_actions > 1 { log_actions } else { 1.0 };
        let iota = (log_factor * 4.0 * d * k * h / self.failure_prob).ln().max(0.0);
        let beta = self.beta.unwrap_or(self.c1 * d * h * iota.sqrt());
        Schedule {
            alpha,
            eta,
            beta,
            xi,
            iota,
        }
    }
}

/// Action distribution at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
}

impl PolicyDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Inverse-CDF draw given u ∈ [0, 1).
    pub fn sample_with(&self, u: f64) -> usize {
        sample_index(&self.probs, u)
    }
}

/// min{⟨w, φ⟩ + β·√(φᵀΛ⁻¹φ), H}.
pub fn q_value(w: &[f64], g: &GramInverse, beta: f64, phi: &FeatureVector, horizon: usize) -> f64 {
    let bonus = if beta == 0.0 { 0.0 } else { beta * bonus_quadratic_form(g, phi) };
    (phi.dot(w) + bonus).min(horizon as f64)
}

/// Soft-max over the composite values q_r + Y·q_g with inverse temperature α.
pub fn softmax_policy(q_r: &[f64], q_g: &[f64], dual: f64, alpha: f64) -> PolicyDistribution {
    assert_eq!(q_r.len(), q_g.len(), "q_r/q_g length mismatch");
    let composite: Vec<f64> = q_r.iter().zip(q_g).map(|(r, g)| r + dual * g).collect();
    softmax(&composite, alpha)
}

/// Soft-max of a single value vector, shifted by its maximum before exponentiating.
pub fn softmax(values: &[f64], alpha: f64) -> PolicyDistribution {
    assert!(!values.is_empty(), "soft-max of an empty vector");
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values.iter().map(|v| (alpha * (v - max)).exp()).collect();
    let total: f64 = weights.iter().sum();
    PolicyDistribution {
        probs: weights.into_iter().map(|w| w / total).collect(),
    }
}

/// Deterministic greedy distribution; ties go to the lowest index.
pub fn greedy_policy(values: &[f64]) -> PolicyDistribution {
    assert!(!values.is_empty(), "greedy policy over an empty vector");
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let mut probs = vec![0.0; values.len()];
    probs[best] = 1.0;
    PolicyDistribution { probs }
}

/// Σ_a π(a)·q(a).
pub fn v_value(policy: &PolicyDistribution, q: &[f64]) -> f64 {
    assert_eq!(policy.probs.len(), q.len(), "policy/q length mismatch");
    policy.probs.iter().zip(q).map(|(p, q)| p * q).sum()
}

/// Projected dual ascent: clamp(Y + η(b − V_g), 0, ξ).
pub fn dual_update(dual: f64, eta: f64, threshold: f64, v_utility: f64, xi: f64) -> f64 {
    (dual + eta * (threshold - v_utility)).min(xi).max(0.0)
}

/// Independent, seedable random streams for one run: one for environment
/// transitions, one for action sampling.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub env: ChaCha8Rng,
    pub policy: ChaCha8Rng,
}

impl RunStreams {
    pub fn from_seed(seed: u64) -> Self {
        let mut env = ChaCha8Rng::seed_from_u64(seed);
        env.set_stream(0);
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        policy.set_stream(1);
        Self { env, policy }
    }
}

/// Q-values, policy and V-values of the current estimates at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvaluation {
    pub q_reward: Vec<f64>,
    pub q_utility: Vec<f64>,
    pub policy: PolicyDistribution,
    pub v_reward: f64,
    pub v_utility: f64,
}

#[derive(Debug, Clone)]
struct SuccessorGroup {
    state: StateId,
    feature_sum: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepModel {
    gram: GramInverse,
    /// Σ φ_τ·r_τ and Σ φ_τ·g_τ: the part of the targets that never changes.
    immediate: RidgeAccumulator,
    /// Full right-hand sides from the latest backward pass.
    targets: RidgeAccumulator,
    successors: Vec<SuccessorGroup>,
    successor_index: BTreeMap<StateId, usize>,
    w_reward: Vec<f64>,
    w_utility: Vec<f64>,
}

impl StepModel {
    fn new(dim: usize, lambda_reg: f64) -> Result<Self, LinalgError> {
        Ok(Self {
            gram: GramInverse::new(dim, lambda_reg)?,
            immediate: RidgeAccumulator::new(dim)?,
            targets: RidgeAccumulator::new(dim)?,
            successors: Vec::new(),
            successor_index: BTreeMap::new(),
            w_reward: vec![0.0; dim],
            w_utility: vec![0.0; dim],
        })
    }

    fn add_successor(&mut self, next: StateId, phi: &FeatureVector) {
        let slot = *self.successor_index.entry(next).or_insert_with(|| {
            self.successors.push(SuccessorGroup {
                state: next,
                feature_sum: vec![0.0; phi.dim()],
            });
            self.successors.len() - 1
        });
        for (acc, x) in self.successors[slot].feature_sum.iter_mut().zip(phi.as_slice()) {
            *acc += x;
        }
    }
}

/// Everything observed and estimated during one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// 1-based episode index k.
    pub episode: usize,
    pub steps: Vec<EpisodeStep>,
    /// V^k_{r,1}(x₁) from the backward pass.
    pub v_reward_initial: f64,
    /// V^k_{g,1}(x₁) from the backward pass; drives the dual step.
    pub v_utility_initial: f64,
    pub dual_before: f64,
    pub dual_after: f64,
}

/// Agent state across episodes.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    schedule: Schedule,
    threshold: f64,
    steps: Vec<StepModel>,
    dual: f64,
    completed: usize,
    features: BTreeMap<StateId, Vec<FeatureVector>>,
}

impl Agent {
    /// `threshold` is the original constraint level b; the dual step uses
    /// b + ζ.
    pub fn new(config: AgentConfig, threshold: f64) -> Result<Self, AgentError> {
        config.validate()?;
        if !threshold.is_finite() {
            return Err(AgentError::InvalidConfig("threshold must be finite".into()));
        }
        let steps = (0..config.horizon)
            .map(|_| StepModel::new(config.feature_dim, config.lambda_reg))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            schedule: config.schedule(),
            config,
            threshold,
            steps,
            dual: 0.0,
            completed: 0,
            features: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Current dual variable Y.
    pub fn dual(&self) -> f64 {
        self.dual
    }

    /// b + ζ.
    pub fn effective_threshold(&self) -> f64 {
        self.threshold + self.config.tighten_zeta
    }

    pub fn episodes_completed(&self) -> usize {
        self.completed
    }

    /// Reward and utility weights at 0-based step `h` from the latest backward pass.
    pub fn weights(&self, h: usize) -> (&[f64], &[f64]) {
        let step = &self.steps[h];
        (&step.w_reward, &step.w_utility)
    }

    pub fn gram_inverse(&self, h: usize) -> &GramInverse {
        &self.steps[h].gram
    }

    /// Regression right-hand sides from the latest backward pass.
    pub fn targets(&self, h: usize) -> &RidgeAccumulator {
        &self.steps[h].targets
    }

    /// Q, policy and V at 0-based step `h` for a state with the given per-action features.
    pub fn evaluate_state(&self, h: usize, phi_per_action: &[FeatureVector]) -> StateEvaluation {
        let step = &self.steps[h];
        let horizon = self.config.horizon;
        let beta = self.schedule.beta;
        let q_reward: Vec<f64> = phi_per_action
            .iter()
            .map(|phi| q_value(&step.w_reward, &step.gram, beta, phi, horizon))
            .collect();
        let q_utility: Vec<f64> = phi_per_action
            .iter()
            .map(|phi| q_value(&step.w_utility, &step.gram, beta, phi, horizon))
            .collect();
        let policy = softmax_policy(&q_reward, &q_utility, self.dual, self.schedule.alpha);
        let v_reward = v_value(&policy, &q_reward);
        let v_utility = v_value(&policy, &q_utility);
        StateEvaluation {
            q_reward,
            q_utility,
            policy,
            v_reward,
            v_utility,
        }
    }

    pub fn policy_at(&self, h: usize, phi_per_action: &[FeatureVector]) -> PolicyDistribution {
        self.evaluate_state(h, phi_per_action).policy
    }

    /// Samples an action from the soft-max policy at step `h`.
    pub fn act<R: Rng + ?Sized>(&self, h: usize, phi_per_action: &[FeatureVector], rng: &mut R) -> usize {
        self.policy_at(h, phi_per_action).sample_with(rng.gen::<f64>())
    }

    /// Refits every step's weights from h = H down to 1 using the current
    /// Gram inverses, stored transitions and dual variable.
    pub fn backward_pass(&mut self) {
        for h in (0..self.config.horizon).rev() {
            let mut targets = self.steps[h].immediate.clone();
            if h + 1 < self.config.horizon {
                for group in &self.steps[h].successors {
                    let phis = &self.features[&group.state];
                    let next = self.evaluate_state(h + 1, phis);
                    targets.add_scaled(Objective::Reward, next.v_reward, &group.feature_sum);
                    targets.add_scaled(Objective::Utility, next.v_utility, &group.feature_sum);
                }
            }
            let step = &mut self.steps[h];
            step.w_reward = ridge_solve(&step.gram, &targets, Objective::Reward).expect("dims match");
            step.w_utility = ridge_solve(&step.gram, &targets, Objective::Utility).expect("dims match");
            step.targets = targets;
        }
    }

    fn cache_features<E: Environment>(&mut self, env: &E, state: StateId) -> Result<(), AgentError> {
        if !self.features.contains_key(&state) {
            let phis = (0..self.config.n_actions)
                .map(|a| env.features_of(state, a))
                .collect::<Result<Vec<_>, _>>()?;
            self.features.insert(state, phis);
        }
        Ok(())
    }

    fn check_env<E: Environment>(&self, env: &E) -> Result<(), AgentError> {
        let c = &self.config;
        if env.horizon() != c.horizon || env.n_actions() != c.n_actions || env.feature_dim() != c.feature_dim {
            return Err(AgentError::EnvironmentMismatch(format!(
                "env (H={}, A={}, d={}) vs agent (H={}, A={}, d={})",
                env.horizon(),
                env.n_actions(),
                env.feature_dim(),
                c.horizon,
                c.n_actions,
                c.feature_dim
            )));
        }
        Ok(())
    }

    pub fn run_episode<E: Environment>(
        &mut self,
        env: &mut E,
        streams: &mut RunStreams,
    ) -> Result<EpisodeTrace, AgentError> {
        self.run_episode_with(env, streams, |_| {})
    }

    /// Plays one episode. `inspect` sees the agent right after the backward
    /// pass, i.e. with exactly the estimates and dual variable that define
    /// this episode's policy.
    pub fn run_episode_with<E: Environment, F: FnOnce(&Agent)>(
        &mut self,
        env: &mut E,
        streams: &mut RunStreams,
        inspect: F,
    ) -> Result<EpisodeTrace, AgentError> {
        if self.completed >= self.config.episodes {
            return Err(AgentError::EpisodesExhausted(self.config.episodes));
        }
        self.check_env(env)?;
        self.backward_pass();
        inspect(self);

        let initial = env.reset();
        self.cache_features(env, initial)?;
        let start = self.evaluate_state(0, &self.features[&initial]);

        let horizon = self.config.horizon;
        let mut steps = Vec::with_capacity(horizon);
        let mut state = initial;
        for h in 0..horizon {
            self.cache_features(env, state)?;
            let action = self.act(h, &self.features[&state], &mut streams.policy);
            let step = env.step(action, &mut streams.env)?;
            state = step.next_state;
            steps.push(step);
        }

        for (h, step) in steps.iter().enumerate() {
            if h + 1 < horizon {
                self.cache_features(env, step.next_state)?;
            }
            let phi = self.features[&step.state][step.action].clone();
            let model = &mut self.steps[h];
            model.gram.rank_one_update(&phi)?;
            model.immediate.add(&phi, step.reward, step.utility);
            if h + 1 < horizon {
                model.add_successor(step.next_state, &phi);
            }
        }

        let dual_before = self.dual;
        self.dual = dual_update(
            self.dual,
            self.schedule.eta,
            self.effective_threshold(),
            start.v_utility,
            self.schedule.xi,
        );
        self.completed += 1;
        Ok(EpisodeTrace {
            episode: self.completed,
            steps,
            v_reward_initial: start.v_reward,
            v_utility_initial: start.v_utility,
            dual_before,
            dual_after: self.dual,
        })
    }
}

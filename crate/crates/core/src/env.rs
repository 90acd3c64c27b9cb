//! Episodic CMDP environments with bandit feedback.
//!
//! The tabular model [`TabularCmdp`] is the ground truth shared by the
//! simulator ([`TabularEnv`]) and the exact oracles. Its canonical feature map
//! is the one-hot embedding φ(s, a) = e_{s·A + a}, which makes every tabular
//! model a linear MDP of dimension S·A.
//!
//! Steps are 0-based internally (`h = 0..H`); docs and file formats that talk
//! about "step 1" mean index 0.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{FeatureVector, LinalgError};

pub type StateId = usize;

const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already has {horizon} steps; call reset first")]
    HorizonExceeded { horizon: usize },
    #[error("state {state} out of range (n_states = {n_states})")]
    StateOutOfRange { state: StateId, n_states: usize },
    #[error("action {action} out of range (n_actions = {n_actions})")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown builtin environment {0:?}")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Feature(#[from] LinalgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed environment file: {0}")]
    Format(#[from] serde_json::Error),
}

/// One transition observed under bandit feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStep {
    pub state: StateId,
    pub action: usize,
    pub reward: f64,
    pub utility: f64,
    pub next_state: StateId,
}

/// What the agent needs from an environment: rollouts plus the feature map.
pub trait Environment {
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Constraint threshold b on the expected cumulative utility.
    fn threshold(&self) -> f64;
    /// Starts a new episode at the fixed initial state.
    fn reset(&mut self) -> StateId;
    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<EpisodeStep, EnvError>;
    fn features_of(&self, state: StateId, action: usize) -> Result<FeatureVector, EnvError>;
}

/// Finite-horizon tabular CMDP.
///
/// Tables are flattened row-major: `transition` and `transition_utility` use
/// index order `[h][s][a][s']`, `reward` and `utility` use `[h][s][a]`.
/// `utility` always holds the expected per-step utility ḡ_h(s, a); when
/// `transition_utility` is present the simulator emits the realized value
/// u_h(s, a, s') instead and `utility` equals Σ_{s'} P(s'|s,a)·u_h(s,a,s').
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub initial_state: StateId,
    pub threshold: f64,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub utility: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_utility: Option<Vec<f64>>,
}

impl TabularCmdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        initial_state: StateId,
        threshold: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        utility: Vec<f64>,
    ) -> Result<Self, EnvError> {
        let model = Self {
            n_states,
            n_actions,
            horizon,
            initial_state,
            threshold,
            transition,
            reward,
            utility,
            transition_utility: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a model whose utility depends on the realized next state.
    /// The expected table is derived from `transition_utility`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_transition_utility(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        initial_state: StateId,
        threshold: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        transition_utility: Vec<f64>,
    ) -> Result<Self, EnvError> {
        let n_rows = horizon * n_states * n_actions;
        if transition.len() != n_rows * n_states || transition_utility.len() != n_rows * n_states {
            return Err(EnvError::InvalidModel(
                "transition / transition_utility length must be H*S*A*S".into(),
            ));
        }
        let utility = transition
            .chunks(n_states)
            .zip(transition_utility.chunks(n_states))
            .map(|(p, u)| p.iter().zip(u).map(|(p, u)| p * u).sum())
            .collect();
        let model = Self {
            n_states,
            n_actions,
            horizon,
            initial_state,
            threshold,
            transition,
            reward,
            utility,
            transition_utility: Some(transition_utility),
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidModel(msg));
        if self.n_states == 0 || self.n_actions == 0 || self.horizon == 0 {
            return bad("n_states, n_actions and horizon must be positive".into());
        }
        if self.initial_state >= self.n_states {
            return bad(format!("initial_state {} >= n_states", self.initial_state));
        }
        let h = self.horizon as f64;
        if !(self.threshold > 0.0 && self.threshold <= h) {
            return bad(format!("threshold {} outside (0, H]", self.threshold));
        }
        let n_rows = self.horizon * self.n_states * self.n_actions;
        if self.transition.len() != n_rows * self.n_states {
            return bad(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                n_rows * self.n_states
            ));
        }
        if self.reward.len() != n_rows || self.utility.len() != n_rows {
            return bad(format!("reward and utility must have {n_rows} entries"));
        }
        for (row_index, row) in self.transition.chunks(self.n_states).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return bad(format!("negative or non-finite probability in row {row_index}"));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return bad(format!("transition row {row_index} sums to {total}"));
            }
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.reward.iter().all(in_unit) {
            return bad("reward entries must lie in [0, 1]".into());
        }
        if !self.utility.iter().all(|v| (-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(v)) {
            return bad("utility entries must lie in [0, 1]".into());
        }
        if let Some(tu) = &self.transition_utility {
            if tu.len() != self.transition.len() {
                return bad("transition_utility must have H*S*A*S entries".into());
            }
            if !tu.iter().all(in_unit) {
                return bad("transition_utility entries must lie in [0, 1]".into());
            }
            for (i, (p, u)) in self
                .transition
                .chunks(self.n_states)
                .zip(tu.chunks(self.n_states))
                .enumerate()
            {
                let expected: f64 = p.iter().zip(u).map(|(p, u)| p * u).sum();
                if (expected - self.utility[i]).abs() > PROB_TOLERANCE {
                    return bad(format!(
                        "utility[{i}] = {} disagrees with expected transition utility {expected}",
                        self.utility[i]
                    ));
                }
            }
        }
        Ok(())
    }

    fn row(&self, h: usize, s: StateId, a: usize) -> usize {
        (h * self.n_states + s) * self.n_actions + a
    }

    /// P_h(· | s, a).
    pub fn transition_row(&self, h: usize, s: StateId, a: usize) -> &[f64] {
        let start = self.row(h, s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, h: usize, s: StateId, a: usize) -> f64 {
        self.reward[self.row(h, s, a)]
    }

    /// Expected utility ḡ_h(s, a).
    pub fn utility(&self, h: usize, s: StateId, a: usize) -> f64 {
        self.utility[self.row(h, s, a)]
    }

    /// Utility the simulator emits for the transition s → s'.
    pub fn realized_utility(&self, h: usize, s: StateId, a: usize, next: StateId) -> f64 {
        match &self.transition_utility {
            Some(tu) => tu[self.row(h, s, a) * self.n_states + next],
            None => self.utility(h, s, a),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Position of (s, a) in the one-hot embedding.
    pub fn feature_index(&self, s: StateId, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn features_of(&self, s: StateId, a: usize) -> Result<FeatureVector, EnvError> {
        self.check_state(s)?;
        self.check_action(a)?;
        Ok(FeatureVector::one_hot(self.feature_dim(), self.feature_index(s, a))?)
    }

    fn check_state(&self, s: StateId) -> Result<(), EnvError> {
        if s >= self.n_states {
            return Err(EnvError::StateOutOfRange {
                state: s,
                n_states: self.n_states,
            });
        }
        Ok(())
    }

    fn check_action(&self, a: usize) -> Result<(), EnvError> {
        if a >= self.n_actions {
            return Err(EnvError::ActionOutOfRange {
                action: a,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }

    /// Copy of the model with a different constraint threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self, EnvError> {
        let mut model = self.clone();
        model.threshold = threshold;
        model.validate()?;
        Ok(model)
    }

    /// Random model with Dirichlet(1)-style transitions and uniform tables.
    /// The threshold is set to `threshold`; callers usually replace it once
    /// the achievable utility range is known.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        threshold: f64,
        rng: &mut R,
    ) -> Result<Self, EnvError> {
        let n_rows = horizon * n_states * n_actions;
        let mut transition = Vec::with_capacity(n_rows * n_states);
        for _ in 0..n_rows {
            let draws: Vec<f64> = (0..n_states)
                .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                .collect();
            let total: f64 = draws.iter().sum();
            transition.extend(draws.iter().map(|v| v / total));
        }
        let reward = (0..n_rows).map(|_| rng.gen::<f64>()).collect();
        let utility = (0..n_rows).map(|_| rng.gen::<f64>()).collect();
        Self::new(n_states, n_actions, horizon, 0, threshold, transition, reward, utility)
    }

    pub fn load_json(path: &Path) -> Result<Self, EnvError> {
        let text = fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, EnvError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<(), EnvError> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

/// The job-scheduling CMDP.
///
/// States count pending jobs (0..=9, starting full at 9). Action 1 sends two
/// jobs to a machine, which clears two w.p. 0.8, one w.p. 0.1 and none
/// otherwise (clamped at zero); action 0 leaves the state unchanged. Reward is
/// 1 − 0.9a on 1-based steps 3 through 6 inclusive and 1 − 0.2a elsewhere.
/// The realized utility is (x − x')/2 and the threshold is b = 4, i.e. at most
/// one job is expected to remain at the end of the episode.
pub fn make_job_scheduler() -> TabularCmdp {
    const N_STATES: usize = 10;
    const N_ACTIONS: usize = 2;
    const HORIZON: usize = 10;
    let mut transition = vec![0.0; HORIZON * N_STATES * N_ACTIONS * N_STATES];
    let mut transition_utility = vec![0.0; transition.len()];
    let mut reward = vec![0.0; HORIZON * N_STATES * N_ACTIONS];
    for h in 0..HORIZON {
        let expensive = (2..=5).contains(&h);
        for x in 0..N_STATES {
            for a in 0..N_ACTIONS {
                let row = (h * N_STATES + x) * N_ACTIONS + a;
                let cost = if expensive { 0.9 } else { 0.2 };
                reward[row] = 1.0 - cost * a as f64;
                let branches = [
                    (x.saturating_sub(2 * a), 0.8),
                    (x.saturating_sub(a), 0.1),
                    (x, 0.1),
                ];
                for (next, p) in branches {
                    transition[row * N_STATES + next] += p;
                    transition_utility[row * N_STATES + next] = (x - next) as f64 / 2.0;
                }
            }
        }
    }
    TabularCmdp::with_transition_utility(
        N_STATES,
        N_ACTIONS,
        HORIZON,
        9,
        4.0,
        transition,
        reward,
        transition_utility,
    )
    .expect("job scheduler model is valid")
}

/// Looks up a builtin environment by name.
pub fn builtin(name: &str) -> Result<TabularCmdp, EnvError> {
    match name {
        "job-scheduler" | "job_scheduler" => Ok(make_job_scheduler()),
        other => Err(EnvError::UnknownBuiltin(other.to_string())),
    }
}

/// Simulator for a [`TabularCmdp`] with one-hot features.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    model: TabularCmdp,
    state: StateId,
    step_index: usize,
}

impl TabularEnv {
    pub fn new(model: TabularCmdp) -> Self {
        let state = model.initial_state;
        Self {
            model,
            state,
            step_index: 0,
        }
    }

    pub fn model(&self) -> &TabularCmdp {
        &self.model
    }

    /// Number of steps taken in the current episode.
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn current_state(&self) -> StateId {
        self.state
    }
}

impl Environment for TabularEnv {
    fn horizon(&self) -> usize {
        self.model.horizon
    }

    fn n_actions(&self) -> usize {
        self.model.n_actions
    }

    fn feature_dim(&self) -> usize {
        self.model.feature_dim()
    }

    fn threshold(&self) -> f64 {
        self.model.threshold
    }

    fn reset(&mut self) -> StateId {
        self.state = self.model.initial_state;
        self.step_index = 0;
        self.state
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<EpisodeStep, EnvError> {
        let h = self.step_index;
        if h >= self.model.horizon {
            return Err(EnvError::HorizonExceeded {
                horizon: self.model.horizon,
            });
        }
        self.model.check_action(action)?;
        let x = self.state;
        let next = sample_index(self.model.transition_row(h, x, action), rng.gen::<f64>());
        let step = EpisodeStep {
            state: x,
            action,
            reward: self.model.reward(h, x, action),
            utility: self.model.realized_utility(h, x, action, next),
            next_state: next,
        };
        self.state = next;
        self.step_index += 1;
        Ok(step)
    }

    fn features_of(&self, state: StateId, action: usize) -> Result<FeatureVector, EnvError> {
        self.model.features_of(state, action)
    }
}

/// Inverse-CDF draw from a probability row given u ∈ [0, 1). Zero-probability
/// entries are never returned.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> TabularCmdp {
        let transition = vec![0.5; 2 * 2 * 2];
        TabularCmdp::new(2, 2, 1, 0, 0.5, transition, vec![0.5; 4], vec![0.5; 4]).unwrap()
    }

    #[test]
    fn reset_returns_fixed_initial_state() {
        let mut env = TabularEnv::new(make_job_scheduler());
        assert_eq!(env.reset(), 9);
        assert_eq!(env.reset(), 9);
        let mut env = TabularEnv::new(two_by_two());
        assert_eq!(env.reset(), 0);
    }

    #[test]
    fn job_scheduler_constants() {
        let m = make_job_scheduler();
        assert_eq!((m.n_states, m.n_actions, m.horizon, m.initial_state), (10, 2, 10, 9));
        assert_eq!(m.threshold, 4.0);
        // 1-based step 4 is expensive, step 1 is not
        assert!((m.reward(3, 5, 1) - 0.1).abs() < 1e-15);
        assert!((m.reward(0, 5, 1) - 0.8).abs() < 1e-15);
        assert_eq!(m.reward(3, 5, 0), 1.0);
        for h in 0..10 {
            let expect = if (2..=5).contains(&h) { 0.1 } else { 0.8 };
            assert!((m.reward(h, 0, 1) - expect).abs() < 1e-15, "h={h}");
        }
    }

    #[test]
    fn job_scheduler_transitions() {
        let m = make_job_scheduler();
        let row = m.transition_row(0, 9, 1);
        assert!((row[7] - 0.8).abs() < 1e-15);
        assert!((row[8] - 0.1).abs() < 1e-15);
        assert!((row[9] - 0.1).abs() < 1e-15);
        for x in 0..10 {
            assert_eq!(m.transition_row(4, x, 0)[x], 1.0);
        }
        // from x = 1 both the -2 and -1 branches clamp to 0
        let row = m.transition_row(0, 1, 1);
        assert!((row[0] - 0.9).abs() < 1e-15);
        assert!((row[1] - 0.1).abs() < 1e-15);
        assert_eq!(m.realized_utility(0, 9, 1, 7), 1.0);
        assert_eq!(m.realized_utility(0, 9, 1, 8), 0.5);
        assert!((m.utility(0, 9, 1) - (0.8 + 0.05)).abs() < 1e-15);
    }

    #[test]
    fn step_past_horizon_is_an_error() {
        let mut env = TabularEnv::new(two_by_two());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset();
        env.step(0, &mut rng).unwrap();
        assert!(matches!(env.step(0, &mut rng), Err(EnvError::HorizonExceeded { horizon: 1 })));
        env.reset();
        assert!(env.step(0, &mut rng).is_ok());
    }

    #[test]
    fn step_rejects_bad_action() {
        let mut env = TabularEnv::new(two_by_two());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(env.step(2, &mut rng), Err(EnvError::ActionOutOfRange { .. })));
    }

    #[test]
    fn one_hot_features() {
        let m = two_by_two();
        assert_eq!(m.features_of(0, 0).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.features_of(1, 1).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.features_of(1, 0).unwrap().norm(), 1.0);
        assert!(matches!(m.features_of(2, 0), Err(EnvError::StateOutOfRange { .. })));
        assert!(matches!(m.features_of(0, 2), Err(EnvError::ActionOutOfRange { .. })));
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(TabularCmdp::new(2, 1, 1, 0, 0.5, vec![0.6, 0.6, 0.5, 0.5], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(TabularCmdp::new(1, 1, 1, 0, 0.5, vec![1.0], vec![1.5], vec![0.0]).is_err());
        assert!(TabularCmdp::new(1, 1, 1, 0, 0.0, vec![1.0], vec![0.5], vec![0.0]).is_err());
        assert!(TabularCmdp::new(1, 1, 1, 0, 1.5, vec![1.0], vec![0.5], vec![0.0]).is_err());
        assert!(TabularCmdp::new(1, 1, 1, 1, 0.5, vec![1.0], vec![0.5], vec![0.0]).is_err());
        assert!(TabularCmdp::new(1, 1, 1, 0, 1.0, vec![1.0], vec![0.5], vec![0.0]).is_ok());
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = TabularCmdp::random(3, 2, 4, 1.0, &mut rng).unwrap();
        assert_eq!(TabularCmdp::from_json_str(&m.to_json_string()).unwrap(), m);
        let js = make_job_scheduler();
        assert_eq!(TabularCmdp::from_json_str(&js.to_json_string()).unwrap(), js);
    }

    #[test]
    fn sample_index_skips_zero_mass() {
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_index(&[0.0, 1.0, 0.0], 0.999_999), 1);
        assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.75), 1);
    }
}

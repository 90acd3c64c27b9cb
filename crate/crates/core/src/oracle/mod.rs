//! Exact computations on known tabular models.
//!
//! - [`policy_eval_dp`]: backward recursion for V^π of both objectives.
//! - [`optimal_values`]: unconstrained backward value iteration for any
//!   per-step reward table (used for Slater margins and Lagrangian checks).
//! - [`solve_occupancy_lp`]: the constrained optimum as a linear program over
//!   state-action occupancy measures, with policy extraction.
//! - [`monte_carlo_eval`]: sampled rollouts, for cross-checking the above.
//!
//! All values use the expected utility table ḡ_h(s, a).

pub mod simplex;

use rand::Rng;
use thiserror::Error;

use crate::env::{sample_index, StateId, TabularCmdp};
use simplex::{LinearProgram, LpOutcome, Relation};

/// Marginal below which a state is treated as unreached during extraction.
pub const UNREACHED_MARGINAL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no policy satisfies the utility constraint (phase-one residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("linear program solver failed: {0}")]
    Solver(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// Non-stationary randomized policy π_h(a | s), stored `[h][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPolicy {
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StepPolicy {
    pub fn new(horizon: usize, n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, OracleError> {
        if probs.len() != horizon * n_states * n_actions {
            return Err(OracleError::InvalidPolicy(format!(
                "expected {} entries, got {}",
                horizon * n_states * n_actions,
                probs.len()
            )));
        }
        for (i, row) in probs.chunks(n_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(OracleError::InvalidPolicy(format!("row {i} is not a distribution")));
            }
        }
        Ok(Self {
            horizon,
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(model: &TabularCmdp) -> Self {
        let a = model.n_actions;
        Self {
            horizon: model.horizon,
            n_states: model.n_states,
            n_actions: a,
            probs: vec![1.0 / a as f64; model.horizon * model.n_states * a],
        }
    }

    /// Deterministic policy from an action table indexed `[h][s]`.
    pub fn deterministic(model: &TabularCmdp, actions: &[usize]) -> Result<Self, OracleError> {
        let a = model.n_actions;
        if actions.len() != model.horizon * model.n_states || actions.iter().any(|&x| x >= a) {
            return Err(OracleError::InvalidPolicy("bad action table".into()));
        }
        let mut probs = vec![0.0; actions.len() * a];
        for (i, &act) in actions.iter().enumerate() {
            probs[i * a + act] = 1.0;
        }
        Ok(Self {
            horizon: model.horizon,
            n_states: model.n_states,
            n_actions: a,
            probs,
        })
    }

    /// Builds a policy row by row from a closure returning π_h(· | s).
    pub fn from_fn<F: FnMut(usize, StateId) -> Vec<f64>>(
        model: &TabularCmdp,
        mut row: F,
    ) -> Result<Self, OracleError> {
        let mut probs = Vec::with_capacity(model.horizon * model.n_states * model.n_actions);
        for h in 0..model.horizon {
            for s in 0..model.n_states {
                let r = row(h, s);
                if r.len() != model.n_actions {
                    return Err(OracleError::InvalidPolicy(format!("row ({h},{s}) has wrong length")));
                }
                probs.extend(r);
            }
        }
        Self::new(model.horizon, model.n_states, model.n_actions, probs)
    }

    pub fn get(&self, h: usize, s: StateId) -> &[f64] {
        let start = (h * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn matches(&self, model: &TabularCmdp) -> bool {
        self.horizon == model.horizon && self.n_states == model.n_states && self.n_actions == model.n_actions
    }
}

/// V-tables from a backward recursion. `v_reward[h][s]` for h = 0..=H
/// (row H is the zero terminal value).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub v_reward_initial: f64,
    pub v_utility_initial: f64,
    pub v_reward: Vec<Vec<f64>>,
    pub v_utility: Vec<Vec<f64>>,
}

/// Exact V^π_{r,h} and V^π_{g,h} by backward induction with V_{H+1} = 0.
pub fn policy_eval_dp(model: &TabularCmdp, pi: &StepPolicy) -> PolicyEvaluation {
    assert!(pi.matches(model), "policy shape does not match model");
    let (n_s, n_a, horizon) = (model.n_states, model.n_actions, model.horizon);
    let mut v_reward = vec![vec![0.0; n_s]; horizon + 1];
    let mut v_utility = vec![vec![0.0; n_s]; horizon + 1];
    for h in (0..horizon).rev() {
        for s in 0..n_s {
            let probs = pi.get(h, s);
            let (mut vr, mut vg) = (0.0, 0.0);
            for a in 0..n_a {
                let p = probs[a];
                if p == 0.0 {
                    continue;
                }
                let row = model.transition_row(h, s, a);
                let next_r: f64 = row.iter().zip(&v_reward[h + 1]).map(|(p, v)| p * v).sum();
                let next_g: f64 = row.iter().zip(&v_utility[h + 1]).map(|(p, v)| p * v).sum();
                vr += p * (model.reward(h, s, a) + next_r);
                vg += p * (model.utility(h, s, a) + next_g);
            }
            v_reward[h][s] = vr;
            v_utility[h][s] = vg;
        }
    }
    PolicyEvaluation {
        v_reward_initial: v_reward[0][model.initial_state],
        v_utility_initial: v_utility[0][model.initial_state],
        v_reward,
        v_utility,
    }
}

/// Optimal value and greedy policy for the per-step reward `score(h, s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalValues {
    pub value_initial: f64,
    pub values: Vec<Vec<f64>>,
    pub policy: StepPolicy,
}

/// Unconstrained backward value iteration with max over actions; ties go to
/// the lowest action index.
pub fn optimal_values<F: Fn(usize, StateId, usize) -> f64>(model: &TabularCmdp, score: F) -> OptimalValues {
    let (n_s, n_a, horizon) = (model.n_states, model.n_actions, model.horizon);
    let mut values = vec![vec![0.0; n_s]; horizon + 1];
    let mut actions = vec![0usize; horizon * n_s];
    for h in (0..horizon).rev() {
        for s in 0..n_s {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_a {
                let row = model.transition_row(h, s, a);
                let next: f64 = row.iter().zip(&values[h + 1]).map(|(p, v)| p * v).sum();
                let q = score(h, s, a) + next;
                if q > best {
                    best = q;
                    actions[h * n_s + s] = a;
                }
            }
            values[h][s] = best;
        }
    }
    OptimalValues {
        value_initial: values[0][model.initial_state],
        policy: StepPolicy::deterministic(model, &actions).expect("greedy actions are in range"),
        values,
    }
}

/// max_π V^π_{g,1}(x₁) − b. Positive iff a strictly feasible policy exists.
pub fn slater_margin(model: &TabularCmdp) -> f64 {
    optimal_values(model, |h, s, a| model.utility(h, s, a)).value_initial - model.threshold
}

/// State-action occupancy measure ν_h(s, a), stored `[h][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub nu: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn get(&self, h: usize, s: StateId, a: usize) -> f64 {
        self.nu[(h * self.n_states + s) * self.n_actions + a]
    }

    /// Largest deviation from nonnegativity, per-step normalization, flow
    /// conservation and the initial-state condition.
    pub fn max_invariant_violation(&self, model: &TabularCmdp) -> f64 {
        let (n_s, n_a) = (self.n_states, self.n_actions);
        let mut worst = self.nu.iter().fold(0.0f64, |acc, v| acc.max(-v));
        for h in 0..self.horizon {
            let mass: f64 = self.nu[h * n_s * n_a..(h + 1) * n_s * n_a].iter().sum();
            worst = worst.max((mass - 1.0).abs());
        }
        for s in 0..n_s {
            if s != model.initial_state {
                for a in 0..n_a {
                    worst = worst.max(self.get(0, s, a).abs());
                }
            }
        }
        for h in 0..self.horizon.saturating_sub(1) {
            for next in 0..n_s {
                let inflow: f64 = (0..n_s)
                    .flat_map(|s| (0..n_a).map(move |a| (s, a)))
                    .map(|(s, a)| self.get(h, s, a) * model.transition_row(h, s, a)[next])
                    .sum();
                let outflow: f64 = (0..n_a).map(|a| self.get(h + 1, next, a)).sum();
                worst = worst.max((inflow - outflow).abs());
            }
        }
        worst
    }

    /// Σ_h Σ_{s,a} ν_h(s,a)·r_h(s,a) and the same for ḡ.
    pub fn values(&self, model: &TabularCmdp) -> (f64, f64) {
        let mut vr = 0.0;
        let mut vg = 0.0;
        for h in 0..self.horizon {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let nu = self.get(h, s, a);
                    vr += nu * model.reward(h, s, a);
                    vg += nu * model.utility(h, s, a);
                }
            }
        }
        (vr, vg)
    }

    /// π_h(a|s) = ν_h(s,a) / Σ_a' ν_h(s,a'); uniform where the marginal is
    /// below [`UNREACHED_MARGINAL`].
    pub fn extract_policy(&self) -> StepPolicy {
        let n_a = self.n_actions;
        let mut probs = Vec::with_capacity(self.nu.len());
        for row in self.nu.chunks(n_a) {
            let clipped: Vec<f64> = row.iter().map(|v| v.max(0.0)).collect();
            let marginal: f64 = clipped.iter().sum();
            if marginal < UNREACHED_MARGINAL {
                probs.extend(std::iter::repeat_n(1.0 / n_a as f64, n_a));
            } else {
                probs.extend(clipped.iter().map(|v| v / marginal));
            }
        }
        StepPolicy {
            horizon: self.horizon,
            n_states: self.n_states,
            n_actions: n_a,
            probs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub optimal_value: f64,
    pub policy: StepPolicy,
    pub occupancy: OccupancyMeasure,
}

/// Builds the occupancy-measure program for threshold `b`.
pub fn occupancy_program(model: &TabularCmdp, threshold: f64) -> LinearProgram {
    let (n_s, n_a, horizon) = (model.n_states, model.n_actions, model.horizon);
    let n = horizon * n_s * n_a;
    let idx = |h: usize, s: usize, a: usize| (h * n_s + s) * n_a + a;
    let mut objective = vec![0.0; n];
    let mut utility_row = vec![0.0; n];
    for h in 0..horizon {
        for s in 0..n_s {
            for a in 0..n_a {
                objective[idx(h, s, a)] = model.reward(h, s, a);
                utility_row[idx(h, s, a)] = model.utility(h, s, a);
            }
        }
    }
    let mut lp = LinearProgram::new(objective);
    for s in 0..n_s {
        let mut row = vec![0.0; n];
        for a in 0..n_a {
            row[idx(0, s, a)] = 1.0;
        }
        let rhs = if s == model.initial_state { 1.0 } else { 0.0 };
        lp.add_row(row, Relation::Eq, rhs);
    }
    for h in 0..horizon.saturating_sub(1) {
        for next in 0..n_s {
            let mut row = vec![0.0; n];
            for a in 0..n_a {
                row[idx(h + 1, next, a)] = 1.0;
            }
            for s in 0..n_s {
                for a in 0..n_a {
                    row[idx(h, s, a)] -= model.transition_row(h, s, a)[next];
                }
            }
            lp.add_row(row, Relation::Eq, 0.0);
        }
    }
    lp.add_row(utility_row, Relation::Ge, threshold);
    lp
}

/// max_ν Σ ν·r subject to flow conservation and Σ ν·ḡ ≥ `threshold`.
///
/// `threshold` may differ from `model.threshold` (e.g. b + ζ, or 0 for the
/// unconstrained optimum).
pub fn solve_occupancy_lp(model: &TabularCmdp, threshold: f64) -> Result<LpSolution, OracleError> {
    let lp = occupancy_program(model, threshold);
    match lp.solve() {
        LpOutcome::Optimal { value, x } => {
            let occupancy = OccupancyMeasure {
                horizon: model.horizon,
                n_states: model.n_states,
                n_actions: model.n_actions,
                nu: x,
            };
            let policy = occupancy.extract_policy();
            Ok(LpSolution {
                optimal_value: value,
                policy,
                occupancy,
            })
        }
        LpOutcome::Infeasible { residual } => Err(OracleError::Infeasible { residual }),
        LpOutcome::Unbounded => Err(OracleError::Solver("unbounded occupancy program".into())),
        LpOutcome::IterationLimit => Err(OracleError::Solver("pivot limit reached".into())),
    }
}

/// Means of the realized cumulative reward and utility over `rollouts`
/// sampled episodes.
pub fn monte_carlo_eval<R: Rng + ?Sized>(
    model: &TabularCmdp,
    pi: &StepPolicy,
    rollouts: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(pi.matches(model), "policy shape does not match model");
    let mut total_r = 0.0;
    let mut total_g = 0.0;
    for _ in 0..rollouts {
        let mut s = model.initial_state;
        for h in 0..model.horizon {
            let a = sample_index(pi.get(h, s), rng.gen::<f64>());
            let next = sample_index(model.transition_row(h, s, a), rng.gen::<f64>());
            total_r += model.reward(h, s, a);
            total_g += model.realized_utility(h, s, a, next);
            s = next;
        }
    }
    (total_r / rollouts as f64, total_g / rollouts as f64)
}

#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;

use softmax_lsvi::env::TabularCmdp;
use softmax_lsvi::oracle::{optimal_values, policy_eval_dp, solve_occupancy_lp, StepPolicy};

pub const GRID: usize = 20;

/// Utility range [min_π V_g, max_π V_g] at the initial state.
pub fn utility_range(model: &TabularCmdp) -> (f64, f64) {
    let hi = optimal_values(model, |h, s, a| model.utility(h, s, a)).value_initial;
    let lo = -optimal_values(model, |h, s, a| -model.utility(h, s, a)).value_initial;
    (lo, hi)
}

/// Random model (S ≤ 5, 2 ≤ A ≤ 3, H ≤ 4) whose threshold sits strictly
/// inside the achievable utility range.
pub fn random_constrained_model<R: Rng>(rng: &mut R) -> TabularCmdp {
    loop {
        let s = rng.gen_range(1..=5);
        let a = rng.gen_range(2..=3);
        let h = rng.gen_range(1..=4);
        let model = TabularCmdp::random(s, a, h, 0.5, rng).unwrap();
        let (lo, hi) = utility_range(&model);
        if hi - lo < 0.05 {
            continue;
        }
        let b = lo + rng.gen_range(0.3..0.8) * (hi - lo);
        return model.with_threshold(b).unwrap();
    }
}

/// Random composition of GRID into `n` parts, scaled to a distribution.
pub fn grid_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // stars and bars: n - 1 bars among GRID + n - 1 slots
    let slots = GRID + n - 1;
    let mut bars = sample(rng, slots, n - 1).into_vec();
    bars.sort_unstable();
    let mut parts = Vec::with_capacity(n);
    let mut start = 0;
    for b in bars {
        parts.push(b - start);
        start = b + 1;
    }
    parts.push(slots - start);
    parts.iter().map(|&p| p as f64 / GRID as f64).collect()
}

pub fn random_grid_policy<R: Rng>(model: &TabularCmdp, rng: &mut R) -> StepPolicy {
    StepPolicy::from_fn(model, |_, _| grid_row(model.n_actions, rng)).unwrap()
}

/// Every deterministic policy when there are at most `limit` of them.
pub fn deterministic_policies(model: &TabularCmdp, limit: usize) -> Vec<StepPolicy> {
    let rows = model.horizon * model.n_states;
    let count = (model.n_actions as f64).powi(rows as i32);
    if count > limit as f64 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut actions = vec![0usize; rows];
    loop {
        out.push(StepPolicy::deterministic(model, &actions).unwrap());
        let mut i = 0;
        while i < rows {
            actions[i] += 1;
            if actions[i] < model.n_actions {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
        if i == rows {
            return out;
        }
    }
}

/// Lagrangian dual D(Y) = max_π V_r + Y·(V_g − b).
pub fn dual_function(model: &TabularCmdp, y: f64) -> f64 {
    optimal_values(model, |h, s, a| model.reward(h, s, a) + y * model.utility(h, s, a)).value_initial
        - y * model.threshold
}

/// min_{Y ∈ [0, y_max]} D(Y): a uniform grid followed by golden-section
/// refinement around the best grid point (D is convex).
pub fn dual_minimum(model: &TabularCmdp, y_max: f64) -> (f64, f64) {
    let n = 4_000;
    let step = y_max / n as f64;
    let (mut best_i, mut best) = (0, f64::INFINITY);
    for i in 0..=n {
        let v = dual_function(model, i as f64 * step);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = (best_i as f64 - 1.0).max(0.0) * step;
    let mut hi = ((best_i + 1) as f64 * step).min(y_max);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if dual_function(model, m1) <= dual_function(model, m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let y = 0.5 * (lo + hi);
    let refined = dual_function(model, y);
    if refined < best {
        (y, refined)
    } else {
        (best_i as f64 * step, best)
    }
}

/// Expected cumulative reward and utility by pushing the state
/// distribution forward, independent of any backward recursion.
pub fn forward_values(model: &TabularCmdp, pi: &StepPolicy) -> (f64, f64) {
    let mut dist = vec![0.0; model.n_states];
    dist[model.initial_state] = 1.0;
    let (mut vr, mut vg) = (0.0, 0.0);
    for h in 0..model.horizon {
        let mut next = vec![0.0; model.n_states];
        for s in 0..model.n_states {
            if dist[s] == 0.0 {
                continue;
            }
            for (a, p) in pi.get(h, s).iter().enumerate() {
                let mass = dist[s] * p;
                vr += mass * model.reward(h, s, a);
                for (s2, q) in model.transition_row(h, s, a).iter().enumerate() {
                    next[s2] += mass * q;
                    vg += mass * q * model.realized_utility(h, s, a, s2);
                }
            }
        }
        dist = next;
    }
    (vr, vg)
}

/// Outcome of checking the LP oracle against enumeration, extraction and duality.
#[derive(Debug, Clone, Copy)]
pub struct CrossCheck {
    pub lp_value: f64,
    /// Largest amount by which a feasible enumerated policy beats the LP.
    pub enumeration_excess: f64,
    pub feasible_enumerated: usize,
    /// |V_r(extracted) − LP value|.
    pub extraction_error: f64,
    /// b − V_g(extracted); ≤ 0 when the extracted policy is feasible.
    pub extraction_shortfall: f64,
    /// |min_Y D(Y) − LP value|.
    pub duality_gap: f64,
}

pub fn cross_check<R: Rng>(model: &TabularCmdp, samples: usize, rng: &mut R) -> CrossCheck {
    let b = model.threshold;
    let lp = solve_occupancy_lp(model, b).unwrap();
    let mut excess = f64::NEG_INFINITY;
    let mut feasible = 0;
    let mut consider = |pi: &StepPolicy| {
        let ev = policy_eval_dp(model, pi);
        if ev.v_utility_initial >= b {
            feasible += 1;
            excess = excess.max(ev.v_reward_initial - lp.optimal_value);
        }
    };
    for pi in deterministic_policies(model, 4096) {
        consider(&pi);
    }
    for _ in 0..samples {
        consider(&random_grid_policy(model, rng));
    }
    let extracted = policy_eval_dp(model, &lp.policy);
    let margin = utility_range(model).1 - b;
    let xi = 2.0 * model.horizon as f64 / margin;
    let (_, dual) = dual_minimum(model, 10.0 * xi);
    CrossCheck {
        lp_value: lp.optimal_value,
        enumeration_excess: excess,
        feasible_enumerated: feasible,
        extraction_error: (extracted.v_reward_initial - lp.optimal_value).abs(),
        extraction_shortfall: b - extracted.v_utility_initial,
        duality_gap: (dual - lp.optimal_value).abs(),
    }
}

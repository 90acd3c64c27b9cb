//! Acceptance criteria 1 through 8. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fail.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softmax_lsvi::agent::{greedy_policy, softmax, softmax_policy, v_value};
use softmax_lsvi::harness::{run_experiment, write_outputs, ExperimentResult, Mode, RunConfig, RunMetrics};
use softmax_lsvi::linalg::{ridge_solve, FeatureVector, GramInverse, Objective, RidgeAccumulator};

/// Bonus constant used for the job-scheduler runs (criteria 6 and 7).
const TUNED_C1: f64 = 1e-4;
const JOB_EPISODES: usize = 20_000;
const JOB_SEEDS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, elapsed: Duration, limit: Duration, outcome: Outcome) -> bool {
    let in_time = elapsed <= limit;
    let pass = outcome.pass && in_time;
    println!(
        "criterion {id}: {} ({}; {:.2}s, limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> FeatureVector {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    FeatureVector::new(v.iter().map(|x| x / n).collect()).unwrap()
}

fn linear_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_inverse = 0.0f64;
    let mut worst_ridge = 0.0f64;
    for d in [2, 4, 8, 16] {
        for _ in 0..100 {
            let mut g = GramInverse::new(d, 1.0).unwrap();
            let mut acc = RidgeAccumulator::new(d).unwrap();
            let mut gram = DMatrix::<f64>::identity(d, d);
            let mut rhs = DVector::<f64>::zeros(d);
            for _ in 0..1_000 {
                let phi = random_unit(d, &mut rng);
                let y = rng.gen_range(0.0..20.0);
                g.rank_one_update(&phi).unwrap();
                acc.add(&phi, y, 0.0);
                let v = DVector::from_column_slice(phi.as_slice());
                gram += &v * v.transpose();
                rhs += v * y;
            }
            let explicit = gram.clone().try_inverse().unwrap();
            let ours = DMatrix::from_fn(d, d, |i, j| g.get(i, j));
            worst_inverse = worst_inverse.max((ours - explicit).abs().max());
            let w = ridge_solve(&g, &acc, Objective::Reward).unwrap();
            let direct = gram.cholesky().unwrap().solve(&rhs);
            for i in 0..d {
                worst_ridge = worst_ridge.max((w[i] - direct[i]).abs());
            }
        }
    }
    Outcome {
        pass: worst_inverse <= 1e-6 && worst_ridge <= 1e-8,
        detail: format!("max inverse error {worst_inverse:.2e}, max ridge error {worst_ridge:.2e}"),
    }
}

fn softmax_gap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let horizon = 10.0;
    let xi = 20.0;
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for i in 0..1_000 {
        let n = [2, 5, 20][i % 3];
        let q_r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=horizon)).collect();
        let q_g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=horizon)).collect();
        let y = rng.gen_range(0.0..=xi);
        let alpha = 10f64.powf(rng.gen_range(-2.0..4.0));
        let composite: Vec<f64> = q_r.iter().zip(&q_g).map(|(r, g)| r + y * g).collect();
        let best = composite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = best - v_value(&softmax_policy(&q_r, &q_g, y, alpha), &composite);
        let bound = (n as f64).ln() / alpha;
        if gap > bound {
            violations += 1;
        }
        tightest = tightest.min(bound - gap);
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in 1000 draws, smallest slack {tightest:.3e}"),
    }
}

fn softmax_lipschitz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.gen_range(2..=20);
        let alpha = 10f64.powf(rng.gen_range(-2.0..2.0));
        let scale = 10f64.powf(rng.gen_range(-4.0..1.0));
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..30.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + scale * rng.gen_range(-1.0..1.0)).collect();
        let (p, q) = (softmax(&a, alpha), softmax(&b, alpha));
        let l1: f64 = p.probs().iter().zip(q.probs()).map(|(x, y)| (x - y).abs()).sum();
        let linf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if l1 > 2.0 * alpha * linf {
            violations += 1;
        }
        if linf > 0.0 {
            max_ratio = max_ratio.max(l1 / (2.0 * alpha * linf));
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in 1000 pairs, largest l1/(2α·l∞) {max_ratio:.3}"),
    }
}

fn greedy_failure() -> Outcome {
    let (m, eps, y) = (100.0, 0.01, 1.0);
    let q_r = [m, 1.0];
    let q_g = [1.0, m + eps / 2.0];
    let qt_r = [m + eps / 2.0, 1.0 - eps / 2.0];
    let qt_g = [1.0 + eps / 2.0, m];
    let yt = 1.0 - eps / 2.0;
    let composite = |r: &[f64; 2], g: &[f64; 2], y: f64| [r[0] + y * g[0], r[1] + y * g[1]];
    let g0 = greedy_policy(&composite(&q_r, &q_g, y));
    let g1 = greedy_policy(&composite(&qt_r, &qt_g, yt));
    let greedy_gap = (v_value(&g0, &q_r) - v_value(&g1, &qt_r)).abs();

    let alpha = 1.0;
    let horizon = 101.0;
    let xi = 2.0 * horizon;
    let bound = eps * (1.0 + 2.0 * alpha * horizon * (1.0 + xi + horizon));
    let s0 = softmax_policy(&q_r, &q_g, y, alpha);
    let s1 = softmax_policy(&qt_r, &qt_g, yt, alpha);
    let soft_gap = (v_value(&s0, &q_r) - v_value(&s1, &qt_r))
        .abs()
        .max((v_value(&s0, &q_g) - v_value(&s1, &qt_g)).abs());
    Outcome {
        pass: greedy_gap > m - 1.0 && soft_gap <= bound,
        detail: format!("greedy gap {greedy_gap:.3} (> {}), soft-max gap {soft_gap:.3} (bound {bound:.1})", m - 1.0),
    }
}

fn oracle_cross_validation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY, 0.0f64);
    let mut feasible = 0;
    for _ in 0..20 {
        let model = common::random_constrained_model(&mut rng);
        let c = common::cross_check(&model, 2_000, &mut rng);
        feasible += c.feasible_enumerated;
        worst.0 = worst.0.max(c.enumeration_excess);
        worst.1 = worst.1.max(c.extraction_error);
        worst.2 = worst.2.max(c.extraction_shortfall);
        worst.3 = worst.3.max(c.duality_gap);
    }
    Outcome {
        pass: worst.0 <= 1e-6 && worst.1 <= 1e-6 && worst.2 <= 1e-6 && worst.3 <= 1e-3,
        detail: format!(
            "{feasible} feasible policies, max excess {:.2e}, extraction error {:.2e}, shortfall {:.2e}, duality gap {:.2e}",
            worst.0, worst.1, worst.2, worst.3
        ),
    }
}

fn job_config(mode: Mode) -> RunConfig {
    let mut c = RunConfig {
        episodes: JOB_EPISODES,
        trials: JOB_SEEDS,
        mode,
        zeta: Some(0.1),
        record_wall_time: false,
        ..RunConfig::default()
    };
    c.agent.gamma = 1.0;
    c.agent.c1 = TUNED_C1;
    c
}

/// Mean over trials of the per-episode signed violation b − V_g in the first
/// and last quarter of episodes.
fn quarter_violation(trials: &[RunMetrics], threshold: f64) -> (f64, f64) {
    let k = trials[0].v_utility.len();
    let q = k / 4;
    let mean = |v: &[f64]| v.iter().map(|g| threshold - g).sum::<f64>() / v.len() as f64;
    let n = trials.len() as f64;
    let first = trials.iter().map(|t| mean(&t.v_utility[..q])).sum::<f64>() / n;
    let last = trials.iter().map(|t| mean(&t.v_utility[k - q..])).sum::<f64>() / n;
    (first, last)
}

fn job_trend(standard: &ExperimentResult) -> Outcome {
    let ratio = standard.summary.halving_ratio.unwrap_or(f64::NAN);
    let (first, last) = quarter_violation(&standard.trials, standard.metadata.threshold);
    let xi = standard.metadata.schedule.xi;
    let duals_ok = standard
        .trials
        .iter()
        .flat_map(|t| &t.records)
        .all(|r| (0.0..=xi).contains(&r.dual_y));
    let a = ratio <= 1.75;
    let b = last <= 0.25 * first;
    let tag = |ok: bool| if ok { "ok" } else { "fail" };
    Outcome {
        pass: a && b && duals_ok,
        detail: format!(
            "c1 = {TUNED_C1}; (a) Regret(K)/Regret(K/2) = {ratio:.4} [{}]; (b) per-episode violation first quarter {first:.4}, last quarter {last:.4} [{}]; (c) duals in [0, {xi}] [{}]",
            tag(a),
            tag(b),
            tag(duals_ok)
        ),
    }
}

fn zero_violation(standard: &ExperimentResult, tightened: &ExperimentResult) -> Outcome {
    let std_pos = standard.summary.rows.last().unwrap().cumulative_violation_positive_part_mean;
    let zv_pos = tightened.summary.rows.last().unwrap().cumulative_violation_positive_part_mean;
    let (_, zv_last) = quarter_violation(&tightened.trials, tightened.metadata.threshold);
    Outcome {
        pass: zv_pos <= 0.5 * std_pos && zv_last <= 0.0,
        detail: format!(
            "positive-part violation at K: tightened {zv_pos:.4} vs standard {std_pos:.4}; final-quarter signed mean {zv_last:.4}"
        ),
    }
}

fn determinism() -> Outcome {
    let mut config = job_config(Mode::ZeroViolation);
    config.episodes = 2_000;
    config.trials = 3;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for dir in &dirs {
        let result = run_experiment(&config).unwrap();
        let written = write_outputs(&result, dir.path()).unwrap();
        files.push(written.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    let identical = files[0] == files[1];
    Outcome {
        pass: identical,
        detail: format!("{} output files compared byte for byte", files[0].len()),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let timed = |f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = f();
        (start.elapsed(), out)
    };
    let (t, o) = timed(&linear_algebra);
    all &= report("1 (linear algebra oracle)", t, Duration::from_secs(10), o);
    let (t, o) = timed(&softmax_gap);
    all &= report("2 (soft-max gap)", t, Duration::from_secs(1), o);
    let (t, o) = timed(&softmax_lipschitz);
    all &= report("3 (soft-max Lipschitz)", t, Duration::from_secs(1), o);
    let (t, o) = timed(&greedy_failure);
    all &= report("4 (greedy failure)", t, Duration::from_secs(1), o);
    let (t, o) = timed(&oracle_cross_validation);
    all &= report("5 (oracle cross-validation)", t, Duration::from_secs(120), o);

    let start = Instant::now();
    let standard = run_experiment(&job_config(Mode::Standard)).unwrap();
    let standard_time = start.elapsed();
    all &= report("6 (job scheduler trend)", standard_time, Duration::from_secs(1200), job_trend(&standard));
    let start = Instant::now();
    let tightened = run_experiment(&job_config(Mode::ZeroViolation)).unwrap();
    let tightened_time = start.elapsed();
    all &= report(
        "7 (zero-violation mode)",
        tightened_time,
        Duration::from_secs(1200),
        zero_violation(&standard, &tightened),
    );

    let (t, o) = timed(&determinism);
    all &= report("8 (determinism)", t, Duration::from_secs(600), o);

    if all {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}

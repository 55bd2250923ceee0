//! Acceptance suite. Runs every criterion in sequence (the timing check must
//! not share the CPU with other tests), prints one PASS/FAIL line each, then
//! fails if any criterion failed.
//!
//! `cargo test --release -p nwbrl --test acceptance`

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nwbrl::basis::{BasisConfig, ModelPriors};
use nwbrl::envs::FamilySpec;
use nwbrl::harness::{build_priors, eval_zero_shot, init_run, run_experiment, RunConfig, RunOutput};
use nwbrl::linalg::cholesky_call_count;
use nwbrl::metrics::{bootstrap_ci, iqm};
use nwbrl::ppo::PpoConfig;
use nwbrl::verify::{self, random_belief, random_matrix};

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
}

/// Writes straight to stderr so the lines survive libtest output capture.
fn emit(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn report(id: usize, title: &'static str, passed: bool, detail: String, elapsed: Duration) -> Outcome {
    let detail = format!("{detail}; {:.1}s", elapsed.as_secs_f64());
    emit(&format!("criterion {id} [{}] {title}: {detail}", if passed { "PASS" } else { "FAIL" }));
    Outcome {
        id,
        title,
        passed,
        detail,
    }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let r = verify::check_conjugacy(100, 1);
    let el = t.elapsed();
    report(1, "conjugacy suite", r.passed && within(el, 10), r.detail, el)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let checks = [
        verify::check_quadrature(10, 2),
        verify::check_chain_identity(50, 2),
        verify::check_known_noise_marginal(20, 2),
    ];
    let el = t.elapsed();
    let passed = checks.iter().all(|c| c.passed) && within(el, 60);
    let detail = checks.iter().map(|c| c.detail.clone()).collect::<Vec<_>>().join(" | ");
    report(2, "marginal-likelihood oracles", passed, detail, el)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let r = verify::check_model_gradients(20, 3);
    let el = t.elapsed();
    report(3, "gradient check", r.passed && within(el, 120), r.detail, el)
}

/// Median seconds per `observe` over `updates` rows, and the number of
/// Cholesky factorizations performed meanwhile.
fn time_observe(d: usize, p: usize, updates: usize, seed: u64) -> (f64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut belief = random_belief(d, p, &mut rng);
    let c = random_matrix(updates, d, &mut rng).scale(1.0 / (d as f64).sqrt());
    let y = random_matrix(updates, p, &mut rng);
    let refresh_every = 1000;
    let before = cholesky_call_count();
    let mut times = Vec::with_capacity(updates);
    for i in 0..updates {
        let t = Instant::now();
        belief.observe(c.row(i), y.row(i)).expect("online update");
        if belief.online_since_refresh() >= refresh_every {
            belief.refine_inverse();
        }
        times.push(t.elapsed().as_secs_f64());
    }
    let calls = cholesky_call_count() - before;
    times.sort_by(f64::total_cmp);
    (times[updates / 2], calls)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    // warm caches before timing
    time_observe(128, 4, 500, 40);
    let (t128, calls128) = time_observe(128, 4, 10_000, 41);
    let (t256, calls256) = time_observe(256, 4, 10_000, 42);
    let ratio = t256 / t128;
    let el = t.elapsed();
    report(
        4,
        "online complexity",
        ratio < 5.5 && calls128 == 0 && calls256 == 0,
        format!(
            "median observe {:.2}us (D=128) vs {:.2}us (D=256), ratio {ratio:.2} (< 5.5); cholesky calls {calls128} + {calls256} (= 0)",
            t128 * 1e6,
            t256 * 1e6
        ),
        el,
    )
}

fn oracle_basis() -> BasisConfig {
    BasisConfig {
        d_t: 16,
        d_r: 32,
        ..BasisConfig::default()
    }
}

/// LinearOracle model learning without policy training: 100 iterations of
/// 20 model gradient steps each.
fn oracle_config(seed: u64, transition_noise_std: f64) -> RunConfig {
    let mut family = FamilySpec::linear_oracle(4, 2);
    if let FamilySpec::LinearOracle {
        transition_noise_std: s, ..
    } = &mut family
    {
        *s = transition_noise_std;
    }
    RunConfig {
        family,
        seed,
        iterations: 100,
        tasks_per_iter: 10,
        test_tasks: 10,
        eval_every: 100,
        checkpoint_every: 0,
        train_policy: false,
        track_kl: false,
        basis: oracle_basis(),
        ..RunConfig::default()
    }
}

fn final_heldout_l1(run: &RunOutput) -> f64 {
    run.rows
        .iter()
        .rev()
        .find_map(|r| r.trans_l1_heldout)
        .expect("final evaluation row")
}

fn untrained_heldout_l1(cfg: &RunConfig) -> f64 {
    let cfg = cfg.resolved().expect("valid config");
    let (nets, policy, agent) = init_run(&cfg).expect("init");
    let priors = build_priors(&cfg).expect("priors");
    eval_zero_shot(&cfg, &policy, &nets, &priors, &agent.normalizer, cfg.test_tasks, cfg.eval_episodes, cfg.seed)
        .expect("eval")
        .trans_l1_heldout
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let sigma = 0.1;
    let floor = 4.0 * sigma * (2.0 / std::f64::consts::PI).sqrt();
    let mut all = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let cfg = oracle_config(seed, sigma);
        let before = untrained_heldout_l1(&cfg);
        let run = run_experiment(&cfg, None).expect("oracle run");
        assert_eq!(run.model_losses.len(), 2000);
        let after = final_heldout_l1(&run);
        let ok = after < 2.0 * floor && before / after >= 5.0;
        all &= ok;
        parts.push(format!("seed {seed}: {before:.3} -> {after:.3} (x{:.2})", before / after));
    }
    let el = t.elapsed();
    report(
        5,
        "model learning on oracle family",
        all && within(el, 600),
        format!(
            "held-out transition L1 after 2000 steps vs untrained, need < {:.3} (2x floor {floor:.3}) and ratio >= 5: {}",
            2.0 * floor,
            parts.join(", ")
        ),
        el,
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    // the known-noise arm fixes Σ = (ν Ω)⁻¹; the true noise variance is 4x that
    let probe = oracle_config(0, 0.0).resolved().expect("config");
    let mut known = probe.clone();
    known.known_noise = true;
    let fixed_var = match build_priors(&known).expect("priors") {
        ModelPriors::KnownNoise { t, .. } => t.sigma()[(0, 0)],
        ModelPriors::NoiseInference { .. } => unreachable!("known-noise arm"),
    };
    let true_std = (4.0 * fixed_var).sqrt();
    let (mut full, mut fixed) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let cfg = oracle_config(seed, true_std);
        full.push(final_heldout_l1(&run_experiment(&cfg, None).expect("full arm")));
        let mut kn = cfg.clone();
        kn.known_noise = true;
        fixed.push(final_heldout_l1(&run_experiment(&kn, None).expect("known-noise arm")));
    }
    let (a, b) = (iqm(&full).expect("iqm"), iqm(&fixed).expect("iqm"));
    let el = t.elapsed();
    report(
        6,
        "noise-inference ablation trend",
        a < b && within(el, 1200),
        format!("true noise std {true_std:.4} (4x fixed variance {fixed_var:.4}); IQM held-out transition L1: noise inference {a:.4} vs known noise {b:.4}"),
        el,
    )
}

fn point_goal_config(seed: u64, belief: bool) -> RunConfig {
    let mut cfg = RunConfig {
        family: FamilySpec::point_goal(),
        seed,
        iterations: 100,
        tasks_per_iter: 20,
        test_tasks: 20,
        eval_every: 100,
        checkpoint_every: 0,
        basis: BasisConfig {
            d_t: 4,
            d_r: 32,
            ..BasisConfig::default()
        },
        ppo: PpoConfig {
            hidden: vec![64, 64],
            ..PpoConfig::default()
        },
        ..RunConfig::default()
    };
    if !belief {
        cfg.agent.belief_features = false;
        cfg.train_model = false;
        cfg.track_kl = false;
    }
    cfg
}

fn criteria_7_and_8() -> (Outcome, Outcome) {
    let t = Instant::now();
    let seeds = 10;
    let mut belief_runs = Vec::new();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in 0..seeds {
        let run = run_experiment(&point_goal_config(seed, true), None).expect("belief run");
        with.push(run.rows.iter().rev().find_map(|r| r.test_success).expect("eval"));
        belief_runs.push(run);
        let blind = run_experiment(&point_goal_config(seed, false), None).expect("blind run");
        without.push(blind.rows.iter().rev().find_map(|r| r.test_success).expect("eval"));
    }
    let el = t.elapsed();
    let (a, b) = (iqm(&with).expect("iqm"), iqm(&without).expect("iqm"));
    let ci_a = bootstrap_ci(&with, 0.95, 2000, 7001).expect("ci");
    let ci_b = bootstrap_ci(&without, 0.95, 2000, 7002).expect("ci");
    let gap = a - b;
    let c7 = report(
        7,
        "end-to-end belief-conditioned PPO",
        gap >= 0.2 && within(el, 2700),
        format!(
            "IQM test success {a:.3} [{:.3}, {:.3}] vs belief-blind {b:.3} [{:.3}, {:.3}], gap {gap:.3} (>= 0.2); per-seed {with:?} vs {without:?}",
            ci_a.0, ci_a.1, ci_b.0, ci_b.1
        ),
        el,
    );
    let min_kl = belief_runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| row.kl_t.min(row.kl_r)))
        .fold(f64::INFINITY, f64::min);
    let c8 = report(
        8,
        "no-collapse diagnostic",
        min_kl > 1e-3,
        format!("minimum per-iteration expected KL over {} iterations x {seeds} runs: {min_kl:.3e} (> 1e-3)", belief_runs[0].rows.len()),
        Duration::ZERO,
    );
    (c7, c8)
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let examples = verify::check_metric_examples();
    let coverage = verify::check_bootstrap_coverage(1000, 9);
    let el = t.elapsed();
    report(
        9,
        "metric unit tests",
        examples.passed && coverage.passed && within(el, 60),
        format!("{} | {}", examples.detail, coverage.detail),
        el,
    )
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6()];
    let (c7, c8) = criteria_7_and_8();
    outcomes.push(c7);
    outcomes.push(c8);
    outcomes.push(criterion_9());

    emit("\nacceptance summary");
    for o in &outcomes {
        emit(&format!("  {} criterion {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.title));
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("criterion {} ({}): {}", o.id, o.title, o.detail))
        .collect();
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}

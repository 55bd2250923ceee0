use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nwbrl::envs::{read_trajectory_jsonl, sample_task, write_trajectory_jsonl, FamilySpec, TrajectoryRow};
use nwbrl::linalg::Matrix;
use nwbrl::metrics::iqm;
use nwbrl::ppo::compute_gae;
use nwbrl::verify::gae_brute_force;

fn finite() -> impl Strategy<Value = f64> {
    -1e3f64..1e3
}

proptest! {
    #[test]
    fn iqm_ignores_order(mut xs in prop::collection::vec(finite(), 1..40), seed in any::<u64>()) {
        let a = iqm(&xs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..xs.len()).rev() {
            xs.swap(i, rng.random_range(0..=i));
        }
        prop_assert!((iqm(&xs).unwrap() - a).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn iqm_shifts_with_data(xs in prop::collection::vec(finite(), 1..40), c in finite()) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = iqm(&xs).unwrap();
        prop_assert!((iqm(&shifted).unwrap() - (a + c)).abs() < 1e-9);
    }

    #[test]
    fn iqm_is_bracketed_by_data(xs in prop::collection::vec(finite(), 1..40)) {
        let v = iqm(&xs).unwrap();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-9 <= v && v <= hi + 1e-9);
    }

    #[test]
    fn gae_matches_brute_force(
        steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.15)), 1..30),
        last in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&r, &v, &d, last, gamma, lambda);
        let brute = gae_brute_force(&r, &v, &d, last, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((adv[t] - brute[t]).abs() < 1e-9);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn task_sampling_is_deterministic(seed in any::<u64>()) {
        let spec = FamilySpec::point_goal();
        let mut a = sample_task(&spec, seed);
        let mut b = sample_task(&spec, seed);
        prop_assert_eq!(a.reset(), b.reset());
        for _ in 0..5 {
            prop_assert_eq!(a.step(&[0.3, -0.7]).unwrap(), b.step(&[0.3, -0.7]).unwrap());
        }
    }
}

#[test]
fn oracle_noise_matches_ground_truth_moments() {
    let spec = FamilySpec::linear_oracle(3, 2);
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noise_var = 0.0;
    for seed in 0..40 {
        let mut task = sample_task(&spec, seed);
        let truth = task.ground_truth_models().unwrap();
        noise_var = truth.sigma_t[(0, 0)];
        let mut s = task.reset();
        while task.t() < task.horizon() {
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = s.iter().chain(&a).copied().collect();
            let mean = Matrix::row_vector(&x).matmul(&truth.w_t);
            let out = task.step(&a).unwrap();
            residuals.push(out.s_next.iter().zip(mean.as_slice()).map(|(y, m)| y - m).collect());
            s = out.s_next;
        }
    }
    let n = residuals.len() as f64;
    for j in 0..3 {
        let mean = residuals.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let se = (noise_var / n).sqrt();
        assert!(mean.abs() < 5.0 * se, "dim {j}: mean {mean}");
        assert!((var / noise_var - 1.0).abs() < 0.1, "dim {j}: variance {var} vs {noise_var}");
    }
    // cross-dimension covariance vanishes
    let cov01 = residuals.iter().map(|r| r[0] * r[1]).sum::<f64>() / n;
    assert!(cov01.abs() < 0.1 * noise_var);
}

#[test]
fn point_goal_is_not_an_oracle() {
    assert!(sample_task(&FamilySpec::point_goal(), 1).ground_truth_models().is_err());
}

#[test]
fn trajectory_roundtrip_replays_exactly() {
    let spec = FamilySpec::linear_oracle(2, 1);
    let mut task = sample_task(&spec, 77);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    let mut s = task.reset();
    while task.t() < task.horizon() {
        let a = vec![rng.random_range(-2.0..2.0)];
        let t = task.t();
        let out = task.step(&a).unwrap();
        rows.push(TrajectoryRow {
            t,
            s: s.clone(),
            a,
            s_next: out.s_next.clone(),
            r: out.r,
            done: out.done,
        });
        s = out.s_next;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.jsonl");
    write_trajectory_jsonl(&path, &rows).unwrap();
    let back = read_trajectory_jsonl(&path).unwrap();
    assert_eq!(back, rows);

    // replaying the logged actions on a fresh copy of the task reproduces it
    let mut replay = sample_task(&spec, 77);
    assert_eq!(replay.reset(), back[0].s);
    for row in &back {
        let out = replay.step(&row.a).unwrap();
        assert_eq!(out.s_next, row.s_next);
        assert_eq!(out.r, row.r);
        assert_eq!(out.done, row.done);
    }
    assert!(back.last().unwrap().done);
}

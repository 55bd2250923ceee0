//! Synthetic multi-task environment families.
//!
//! * `PointGoal2D`: a point mass moves toward a hidden goal on the unit ring
//!   with a hidden actuator gain. Only the reward reveals the goal.
//! * `LinearOracle`: transitions and rewards are exactly linear in the raw
//!   `[s, a]` (and `[s, a, s']`) inputs, so the generating model is known.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::Context;
use crate::linalg::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode exhausted at horizon {0}")]
    EpisodeExhausted(usize),
    #[error("task family has no linear ground truth")]
    NotOracleFamily,
    #[error("action width {got}, expected {expected}")]
    ActionDimension { expected: usize, got: usize },
    #[error("invalid family definition: {0}")]
    InvalidFamily(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    PointGoal2d {
        #[serde(default = "defaults::pg_horizon")]
        horizon: usize,
        #[serde(default = "defaults::pg_dt")]
        dt: f64,
        #[serde(default = "defaults::pg_noise")]
        noise_std: f64,
        #[serde(default = "defaults::one")]
        goal_radius: f64,
        #[serde(default = "defaults::gain_lo")]
        gain_lo: f64,
        #[serde(default = "defaults::gain_hi")]
        gain_hi: f64,
        #[serde(default = "defaults::success_radius")]
        success_radius: f64,
    },
    LinearOracle {
        #[serde(default = "defaults::lo_ds")]
        d_s: usize,
        #[serde(default = "defaults::lo_da")]
        d_a: usize,
        #[serde(default = "defaults::lo_horizon")]
        horizon: usize,
        #[serde(default = "defaults::lo_noise")]
        transition_noise_std: f64,
        #[serde(default = "defaults::lo_noise")]
        reward_noise_std: f64,
        /// Standard deviation of the `W_T` entries.
        #[serde(default = "defaults::one")]
        weight_std: f64,
        #[serde(default = "defaults::one")]
        init_std: f64,
    },
}

mod defaults {
    pub fn pg_horizon() -> usize {
        60
    }
    pub fn pg_dt() -> f64 {
        0.1
    }
    pub fn pg_noise() -> f64 {
        0.01
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn gain_lo() -> f64 {
        0.5
    }
    pub fn gain_hi() -> f64 {
        1.5
    }
    pub fn success_radius() -> f64 {
        0.1
    }
    pub fn lo_ds() -> usize {
        4
    }
    pub fn lo_da() -> usize {
        2
    }
    pub fn lo_horizon() -> usize {
        50
    }
    pub fn lo_noise() -> f64 {
        0.1
    }
}

impl FamilySpec {
    pub fn point_goal() -> Self {
        FamilySpec::PointGoal2d {
            horizon: defaults::pg_horizon(),
            dt: defaults::pg_dt(),
            noise_std: defaults::pg_noise(),
            goal_radius: 1.0,
            gain_lo: defaults::gain_lo(),
            gain_hi: defaults::gain_hi(),
            success_radius: defaults::success_radius(),
        }
    }

    pub fn linear_oracle(d_s: usize, d_a: usize) -> Self {
        FamilySpec::LinearOracle {
            d_s,
            d_a,
            horizon: defaults::lo_horizon(),
            transition_noise_std: defaults::lo_noise(),
            reward_noise_std: defaults::lo_noise(),
            weight_std: 1.0,
            init_std: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::PointGoal2d { .. } => "point_goal_2d",
            FamilySpec::LinearOracle { .. } => "linear_oracle",
        }
    }

    pub fn d_s(&self) -> usize {
        match self {
            FamilySpec::PointGoal2d { .. } => 2,
            FamilySpec::LinearOracle { d_s, .. } => *d_s,
        }
    }

    pub fn d_a(&self) -> usize {
        match self {
            FamilySpec::PointGoal2d { .. } => 2,
            FamilySpec::LinearOracle { d_a, .. } => *d_a,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            FamilySpec::PointGoal2d { horizon, .. } | FamilySpec::LinearOracle { horizon, .. } => *horizon,
        }
    }

    /// Actions are clipped to `[-1, 1]` per coordinate.
    pub fn action_bound(&self) -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EnvError::InvalidFamily(m.to_string()));
        match self {
            FamilySpec::PointGoal2d {
                horizon,
                dt,
                noise_std,
                goal_radius,
                gain_lo,
                gain_hi,
                success_radius,
            } => {
                if *horizon == 0 {
                    return bad("horizon must be positive");
                }
                if !(*dt > 0.0 && *noise_std >= 0.0 && *goal_radius >= 0.0 && *success_radius > 0.0) {
                    return bad("dt, radii must be positive and noise nonnegative");
                }
                if !(*gain_lo <= *gain_hi) {
                    return bad("gain range is empty");
                }
            }
            FamilySpec::LinearOracle {
                d_s,
                d_a,
                horizon,
                transition_noise_std,
                reward_noise_std,
                weight_std,
                init_std,
            } => {
                if *d_s == 0 || *d_s > 8 || *d_a == 0 || *d_a > 4 {
                    return bad("linear oracle needs 1 <= d_s <= 8 and 1 <= d_a <= 4");
                }
                if *horizon == 0 {
                    return bad("horizon must be positive");
                }
                if !(*transition_noise_std >= 0.0 && *reward_noise_std >= 0.0 && *weight_std >= 0.0 && *init_std >= 0.0)
                {
                    return bad("scales must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

/// A family plus the base seed from which train and test task seeds derive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub spec: FamilySpec,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

const TOP_BIT: u64 = 1 << 63;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TaskFamily {
    pub fn new(spec: FamilySpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    /// Seed of the `index`-th task of a split. Train seeds have the top bit
    /// clear and test seeds have it set, so the two sets never intersect.
    pub fn task_seed(&self, split: Split, index: u64) -> u64 {
        let base = splitmix64(self.seed ^ splitmix64(index));
        match split {
            Split::Train => base & !TOP_BIT,
            Split::Test => base | TOP_BIT,
        }
    }

    pub fn sample(&self, split: Split, index: u64) -> TaskInstance {
        sample_task(&self.spec, self.task_seed(split, index))
    }
}

/// Hidden parameters of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskParams {
    PointGoal { goal: [f64; 2], gain: f64 },
    Linear {
        /// `(D_S + D_A) × D_S`
        w_t: Matrix,
        /// `(2 D_S + D_A) × 1`
        w_r: Matrix,
    },
}

/// Exact generating model of an oracle task.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_t: Matrix,
    pub sigma_t: Matrix,
    pub w_r: Matrix,
    pub sigma_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
}

/// A sampled task with its own episode state and noise stream.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    spec: FamilySpec,
    seed: u64,
    params: TaskParams,
    state: Vec<f64>,
    t: usize,
    reached: bool,
    rng: ChaCha8Rng,
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data)
}

/// Upper bound on the spectral norm of the state-to-state block of `W_T`.
pub const MAX_STATE_GAIN: f64 = 0.95;

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    let ata = a.t_matmul(a);
    let mut v = vec![1.0 / (a.cols() as f64).sqrt(); a.cols()];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = ata.matmul(&Matrix::column_vector(&v)).into_vec();
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n;
        v = w.into_iter().map(|x| x / n).collect();
    }
    lambda.sqrt()
}

/// Draws hidden parameters and the initial state from `seed`.
pub fn sample_task(spec: &FamilySpec, seed: u64) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = match spec {
        FamilySpec::PointGoal2d {
            goal_radius,
            gain_lo,
            gain_hi,
            ..
        } => {
            let angle: f64 = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range").sample(&mut rng);
            let gain = if gain_lo == gain_hi {
                *gain_lo
            } else {
                Uniform::new(*gain_lo, *gain_hi).expect("valid range").sample(&mut rng)
            };
            TaskParams::PointGoal {
                goal: [goal_radius * angle.cos(), goal_radius * angle.sin()],
                gain,
            }
        }
        FamilySpec::LinearOracle {
            d_s, d_a, weight_std, ..
        } => {
            let fan_r = (2 * d_s + d_a) as f64;
            let mut w_t = gaussian_matrix(d_s + d_a, *d_s, *weight_std, &mut rng);
            // keep s -> s' contractive so states stay bounded over the horizon
            let state_rows: Vec<usize> = (0..*d_s).collect();
            let norm = spectral_norm(&w_t.select_rows(&state_rows));
            if norm > MAX_STATE_GAIN {
                let shrink = MAX_STATE_GAIN / norm;
                for i in 0..*d_s {
                    for j in 0..*d_s {
                        w_t[(i, j)] *= shrink;
                    }
                }
            }
            let w_r = gaussian_matrix(2 * d_s + d_a, 1, 1.0 / fan_r.sqrt(), &mut rng);
            TaskParams::Linear { w_t, w_r }
        }
    };
    let episode_seed = rng.next_u64();
    let mut task = TaskInstance {
        spec: spec.clone(),
        seed,
        params,
        state: vec![0.0; spec.d_s()],
        t: 0,
        reached: false,
        rng: ChaCha8Rng::seed_from_u64(episode_seed),
    };
    task.reset();
    task
}

/// Draws a task seed from `rng` and samples from it.
pub fn sample_task_rng<R: Rng + ?Sized>(spec: &FamilySpec, rng: &mut R) -> TaskInstance {
    sample_task(spec, rng.next_u64())
}

impl TaskInstance {
    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &TaskParams {
        &self.params
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon()
    }

    /// True once any step of the current episode ended within the success radius.
    pub fn success(&self) -> bool {
        self.reached
    }

    /// Starts a new episode of the same task. The noise stream continues.
    pub fn reset(&mut self) -> Vec<f64> {
        self.t = 0;
        self.reached = false;
        self.state = match &self.spec {
            FamilySpec::PointGoal2d { .. } => vec![0.0; 2],
            FamilySpec::LinearOracle { d_s, init_std, .. } => {
                (0..*d_s).map(|_| init_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng)).collect::<Vec<f64>>()
            }
        };
        self.state.clone()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let h = self.horizon();
        if self.t >= h {
            return Err(EnvError::EpisodeExhausted(h));
        }
        if action.len() != self.spec.d_a() {
            return Err(EnvError::ActionDimension {
                expected: self.spec.d_a(),
                got: action.len(),
            });
        }
        let bound = self.spec.action_bound();
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-bound, bound)).collect();
        let (s_next, r) = match (&self.spec, &self.params) {
            (
                FamilySpec::PointGoal2d {
                    dt,
                    noise_std,
                    success_radius,
                    ..
                },
                TaskParams::PointGoal { goal, gain },
            ) => {
                let noise = normal(*noise_std);
                let s_next: Vec<f64> = (0..2)
                    .map(|i| self.state[i] + gain * a[i] * dt + noise.sample(&mut self.rng))
                    .collect();
                let dist = ((s_next[0] - goal[0]).powi(2) + (s_next[1] - goal[1]).powi(2)).sqrt();
                let hit = dist < *success_radius;
                self.reached |= hit;
                (s_next, -dist + if hit { 1.0 } else { 0.0 })
            }
            (
                FamilySpec::LinearOracle {
                    transition_noise_std,
                    reward_noise_std,
                    ..
                },
                TaskParams::Linear { w_t, w_r },
            ) => {
                let x: Vec<f64> = self.state.iter().chain(&a).copied().collect();
                let mean = Matrix::row_vector(&x).matmul(w_t);
                let tn = normal(*transition_noise_std);
                let s_next: Vec<f64> = mean.as_slice().iter().map(|m| m + tn.sample(&mut self.rng)).collect();
                let z: Vec<f64> = x.iter().chain(&s_next).copied().collect();
                let r_mean = Matrix::row_vector(&z).matmul(w_r).item();
                let r = r_mean + normal(*reward_noise_std).sample(&mut self.rng);
                (s_next, r)
            }
            _ => unreachable!("task parameters always match their family"),
        };
        self.state = s_next.clone();
        self.t += 1;
        Ok(StepOutcome {
            s_next,
            r,
            done: self.t >= h,
        })
    }

    /// Generating parameters of an oracle task.
    pub fn ground_truth_models(&self) -> Result<GroundTruth> {
        match (&self.spec, &self.params) {
            (
                FamilySpec::LinearOracle {
                    d_s,
                    transition_noise_std,
                    reward_noise_std,
                    ..
                },
                TaskParams::Linear { w_t, w_r },
            ) => Ok(GroundTruth {
                w_t: w_t.clone(),
                sigma_t: Matrix::scaled_identity(*d_s, transition_noise_std * transition_noise_std),
                w_r: w_r.clone(),
                sigma_r: reward_noise_std * reward_noise_std,
            }),
            _ => Err(EnvError::NotOracleFamily),
        }
    }
}

/// `N(0, std²)`; a zero std yields exact zeros.
fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("nonnegative finite std")
}

/// One line of a trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub done: bool,
}

impl TrajectoryRow {
    pub fn context(&self) -> Context {
        Context {
            s: self.s.clone(),
            a: self.a.clone(),
            s_next: self.s_next.clone(),
            r: self.r,
        }
    }
}

pub fn write_trajectory_jsonl(path: &Path, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trajectory_jsonl(path: &Path) -> std::io::Result<Vec<TrajectoryRow>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_point_goal() -> FamilySpec {
        match FamilySpec::point_goal() {
            FamilySpec::PointGoal2d {
                horizon,
                dt,
                goal_radius,
                gain_lo,
                gain_hi,
                success_radius,
                ..
            } => FamilySpec::PointGoal2d {
                horizon,
                dt,
                noise_std: 0.0,
                goal_radius,
                gain_lo,
                gain_hi,
                success_radius,
            },
            _ => unreachable!(),
        }
    }

    fn quiet_oracle() -> FamilySpec {
        FamilySpec::LinearOracle {
            d_s: 3,
            d_a: 2,
            horizon: 10,
            transition_noise_std: 0.0,
            reward_noise_std: 0.0,
            weight_std: 1.0,
            init_std: 1.0,
        }
    }

    #[test]
    fn same_seed_same_task() {
        let a = sample_task(&FamilySpec::point_goal(), 17);
        let b = sample_task(&FamilySpec::point_goal(), 17);
        assert_eq!(a.params(), b.params());
        assert_eq!(a.state(), b.state());
        let c = sample_task(&FamilySpec::point_goal(), 18);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_action_keeps_state() {
        let mut t = sample_task(&quiet_point_goal(), 3);
        let out = t.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.s_next, vec![0.0, 0.0]);
    }

    #[test]
    fn reward_at_goal_is_one() {
        let spec = FamilySpec::PointGoal2d {
            horizon: 5,
            dt: 0.1,
            noise_std: 0.0,
            goal_radius: 0.0,
            gain_lo: 1.0,
            gain_hi: 1.0,
            success_radius: 0.1,
        };
        let mut t = sample_task(&spec, 1);
        let out = t.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.r, 1.0);
        assert!(t.success());
    }

    #[test]
    fn horizon_and_exhaustion() {
        let mut t = sample_task(&quiet_oracle(), 5);
        for i in 0..10 {
            let out = t.step(&[0.1, -0.2]).unwrap();
            assert_eq!(out.done, i == 9);
        }
        assert_eq!(t.step(&[0.0, 0.0]), Err(EnvError::EpisodeExhausted(10)));
        assert!(matches!(t.step(&[0.0]), Err(EnvError::EpisodeExhausted(_))));
        t.reset();
        assert!(matches!(t.step(&[0.0]), Err(EnvError::ActionDimension { .. })));
    }

    #[test]
    fn noiseless_oracle_is_exactly_linear() {
        let mut t = sample_task(&quiet_oracle(), 9);
        let gt = t.ground_truth_models().unwrap();
        let s = t.state().to_vec();
        let a = [0.3, -0.9];
        let out = t.step(&a).unwrap();
        let x: Vec<f64> = s.iter().chain(&a).copied().collect();
        assert_eq!(out.s_next, Matrix::row_vector(&x).matmul(&gt.w_t).into_vec());
        let z: Vec<f64> = x.iter().chain(&out.s_next).copied().collect();
        assert_eq!(out.r, Matrix::row_vector(&z).matmul(&gt.w_r).item());
    }

    #[test]
    fn point_goal_has_no_ground_truth() {
        let t = sample_task(&FamilySpec::point_goal(), 0);
        assert_eq!(t.ground_truth_models(), Err(EnvError::NotOracleFamily));
    }

    #[test]
    fn actions_are_clipped() {
        let mut t = sample_task(&quiet_point_goal(), 4);
        let TaskParams::PointGoal { gain, .. } = *t.params() else { unreachable!() };
        let out = t.step(&[5.0, -5.0]).unwrap();
        assert!((out.s_next[0] - gain * 0.1).abs() < 1e-15);
        assert!((out.s_next[1] + gain * 0.1).abs() < 1e-15);
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let fam = TaskFamily::new(FamilySpec::point_goal(), 42);
        let train: std::collections::HashSet<u64> = (0..2000).map(|i| fam.task_seed(Split::Train, i)).collect();
        assert!((0..2000).all(|i| !train.contains(&fam.task_seed(Split::Test, i))));
    }

    #[test]
    fn trajectory_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        let rows = vec![TrajectoryRow {
            t: 0,
            s: vec![0.0, 1.5],
            a: vec![-0.25, 1.0],
            s_next: vec![0.1, 1.4],
            r: -0.3,
            done: false,
        }];
        write_trajectory_jsonl(&path, &rows).unwrap();
        assert_eq!(read_trajectory_jsonl(&path).unwrap(), rows);
    }
}

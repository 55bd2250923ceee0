//! Gaussian policy, value baselines, GAE and the clipped-surrogate update.

use std::f64::consts::{E, PI};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape};
use crate::linalg::{cholesky, JitterPolicy, Matrix};
use crate::mlp::{global_norm, Activation, Adam, Mlp, MlpSpec, WeightInit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("observation width {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite loss or gradient in update")]
    NonFiniteLoss,
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("invalid PPO configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, PpoError>;

/// How the policy's scale bounds are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdClamp {
    /// Bounds apply to σ itself.
    Std,
    /// Bounds apply to log σ.
    LogStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ValueNet,
    /// Ridge regression on `[obs, obs², t, t², t³, 1]`, refit after every update.
    LinearFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub std_min: f64,
    pub std_max: f64,
    pub std_clamp: StdClamp,
    pub init_log_std: f64,
    pub standardize_advantages: bool,
    /// Divide rewards by the running std of discounted returns before
    /// computing advantages and value targets.
    pub scale_rewards: bool,
    /// When set, the action mean is `bound · tanh(net(obs))`, which keeps it
    /// inside the action box where its gradient is informative.
    pub mean_bound: Option<f64>,
    pub baseline: BaselineKind,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Tanh,
            clip_eps: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 5e-3,
            value_coef: 0.5,
            lr: 5e-4,
            max_grad_norm: 1.0,
            epochs: 10,
            minibatches: 20,
            std_min: 1e-6,
            std_max: 2.0,
            std_clamp: StdClamp::Std,
            init_log_std: 0.0,
            standardize_advantages: true,
            scale_rewards: true,
            mean_bound: Some(1.0),
            baseline: BaselineKind::ValueNet,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.clip_eps,
            self.gamma,
            self.lr,
            self.max_grad_norm,
            self.std_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(PpoError::InvalidConfig("rates, clip and bounds must be positive"));
        }
        if self.clip_eps >= 1.0 {
            return Err(PpoError::InvalidConfig("clip epsilon must be below 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(PpoError::InvalidConfig("gamma and lambda must lie in [0, 1]"));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(PpoError::InvalidConfig("loss coefficients must be nonnegative"));
        }
        if self.mean_bound.is_some_and(|b| !(b > 0.0)) {
            return Err(PpoError::InvalidConfig("mean bound must be positive"));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err(PpoError::InvalidConfig("epochs and minibatches must be positive"));
        }
        if self.std_clamp == StdClamp::Std && !(self.std_min > 0.0 && self.std_min < self.std_max) {
            return Err(PpoError::InvalidConfig("std bounds must satisfy 0 < min < max"));
        }
        if self.std_clamp == StdClamp::LogStd && !(self.std_min < self.std_max) {
            return Err(PpoError::InvalidConfig("log-std bounds must satisfy min < max"));
        }
        Ok(())
    }

    fn log_std_bounds(&self) -> (f64, f64) {
        match self.std_clamp {
            StdClamp::Std => (self.std_min.ln(), self.std_max.ln()),
            StdClamp::LogStd => (self.std_min, self.std_max),
        }
    }
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn log_prob(&self, a: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(a)
            .map(|((m, s), x)| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.std.iter().map(|s| 0.5 * (2.0 * PI * E).ln() + s.ln()).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }
}

/// Ridge fit of returns on polynomial observation and time features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaseline {
    coef: Option<Vec<f64>>,
    pub ridge: f64,
}

impl LinearBaseline {
    pub fn new() -> Self {
        Self { coef: None, ridge: 1e-5 }
    }

    fn features(obs: &[f64], t: f64) -> Vec<f64> {
        let clipped: Vec<f64> = obs.iter().map(|o| o.clamp(-10.0, 10.0)).collect();
        let mut f = clipped.clone();
        f.extend(clipped.iter().map(|o| o * o));
        f.extend([t, t * t, t * t * t, 1.0]);
        f
    }

    pub fn predict(&self, obs: &[f64], t: f64) -> f64 {
        match &self.coef {
            None => 0.0,
            Some(w) => Self::features(obs, t).iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }

    /// Refits to `(obs, t) -> return`, raising the ridge until the normal
    /// equations factor.
    pub fn fit(&mut self, obs: &[Vec<f64>], times: &[f64], returns: &[f64]) {
        if obs.is_empty() {
            return;
        }
        let rows: Vec<Vec<f64>> = obs.iter().zip(times).map(|(o, t)| Self::features(o, *t)).collect();
        let d = rows[0].len();
        let x = Matrix::from_vec(rows.len(), d, rows.concat());
        let y = Matrix::column_vector(returns);
        let xtx = x.t_matmul(&x);
        let xty = x.t_matmul(&y);
        let mut reg = self.ridge;
        for _ in 0..8 {
            let a = xtx.add(&Matrix::scaled_identity(d, reg));
            if let Ok(ch) = cholesky(&a, &JitterPolicy::none()) {
                if let Ok(w) = ch.solve(&xty) {
                    if w.is_finite() {
                        self.coef = Some(w.into_vec());
                        return;
                    }
                }
            }
            reg *= 10.0;
        }
    }
}

impl Default for LinearBaseline {
    fn default() -> Self {
        Self::new()
    }
}

/// Mean network, state-independent log-std and a separate value network.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub mean_net: Mlp,
    pub log_std: Matrix,
    pub value_net: Mlp,
    pub linear_baseline: LinearBaseline,
    cfg: PpoConfig,
}

/// Output of [`Policy::act`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Self {
        let spec = |output| MlpSpec {
            input: obs_dim,
            hidden: cfg.hidden.clone(),
            output,
            activation: cfg.activation,
            layer_norm: false,
            out_activation: false,
            init: WeightInit::XavierUniform,
        };
        let mean_net = Mlp::new(spec(act_dim), rng);
        let value_net = Mlp::new(spec(1), rng);
        Self {
            mean_net,
            log_std: Matrix::filled(1, act_dim, cfg.init_log_std),
            value_net,
            linear_baseline: LinearBaseline::new(),
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.mean_net.params();
        p.push(&self.log_std);
        p.extend(self.value_net.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.mean_net.params_mut();
        p.push(&mut self.log_std);
        p.extend(self.value_net.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.mean_net.param_names("pi");
        n.push("pi.log_std".to_string());
        n.extend(self.value_net.param_names("vf"));
        n
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }

    /// Clamped σ per action dimension.
    pub fn std(&self) -> Vec<f64> {
        let (lo, hi) = self.cfg.log_std_bounds();
        self.log_std.as_slice().iter().map(|l| l.clamp(lo, hi).exp()).collect()
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim() {
            return Err(PpoError::DimensionMismatch {
                expected: self.obs_dim(),
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Action distribution and value estimate for one observation.
    pub fn forward(&self, obs: &[f64], t: f64) -> Result<(DiagGaussian, f64)> {
        self.check_obs(obs)?;
        let x = Matrix::row_vector(obs);
        let mut mean = self.mean_net.forward(&x).into_vec();
        if let Some(b) = self.cfg.mean_bound {
            mean.iter_mut().for_each(|m| *m = b * m.tanh());
        }
        let value = self.value(obs, t);
        Ok((DiagGaussian { mean, std: self.std() }, value))
    }

    fn value(&self, obs: &[f64], t: f64) -> f64 {
        match self.cfg.baseline {
            BaselineKind::ValueNet => self.value_net.forward(&Matrix::row_vector(obs)).item(),
            BaselineKind::LinearFeature => self.linear_baseline.predict(obs, t),
        }
    }

    /// Samples an action (or takes the mean when `deterministic`).
    /// `t` is the episode time fraction used by the linear baseline.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], t: f64, deterministic: bool, rng: &mut R) -> Result<ActOutput> {
        let (dist, value) = self.forward(obs, t)?;
        let action = if deterministic { dist.mean.clone() } else { dist.sample(rng) };
        Ok(ActOutput {
            log_prob: dist.log_prob(&action),
            action,
            value,
        })
    }

    /// Value estimate for bootstrapping a truncated rollout.
    pub fn value_of(&self, obs: &[f64], t: f64) -> Result<f64> {
        self.check_obs(obs)?;
        Ok(self.value(obs, t))
    }
}

/// Per-step data for one or more episodes, stored in collection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// True on the last step of an episode.
    pub dones: Vec<bool>,
    /// Episode time fraction `t / H`.
    pub times: Vec<f64>,
    /// Value of the state after the final step if it was not terminal.
    pub last_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, obs: Vec<f64>, action: Vec<f64>, log_prob: f64, reward: f64, value: f64, done: bool, time: f64) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.times.push(time);
    }

    /// Concatenates buffers in the given order. Every buffer except the last
    /// must end with a terminal step.
    pub fn merge(buffers: &[RolloutBuffer]) -> RolloutBuffer {
        let mut out = RolloutBuffer::default();
        for b in buffers {
            out.obs.extend(b.obs.iter().cloned());
            out.actions.extend(b.actions.iter().cloned());
            out.log_probs.extend(&b.log_probs);
            out.rewards.extend(&b.rewards);
            out.values.extend(&b.values);
            out.dones.extend(&b.dones);
            out.times.extend(&b.times);
            out.last_value = b.last_value;
        }
        out
    }
}

/// Backward GAE recursion. Returns `(advantages, returns)` with
/// `returns = advantages + values`; no standardization.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae input lengths differ");
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 == n { last_value } else { values[t + 1] };
        let delta = rewards[t] + gamma * next_v * mask - values[t];
        gae = delta + gamma * lambda * mask * gae;
        adv[t] = gae;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit variance; a constant vector maps to zeros.
pub fn standardize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in x.iter_mut() {
        *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoTrainer {
    pub adam: Adam,
    /// Welford `(count, mean, m2)` over discounted returns seen so far.
    pub return_stats: (u64, f64, f64),
}

impl PpoTrainer {
    pub fn new(cfg: &PpoConfig) -> Self {
        Self {
            adam: Adam::new(cfg.lr, Some(cfg.max_grad_norm)),
            return_stats: (0, 0.0, 0.0),
        }
    }

    /// Folds `returns` into the running statistics and returns the reward
    /// scale, 1 until two returns have been seen.
    pub fn update_reward_scale(&mut self, returns: &[f64]) -> f64 {
        let (n, mean, m2) = &mut self.return_stats;
        for &x in returns {
            *n += 1;
            let d = x - *mean;
            *mean += d / *n as f64;
            *m2 += d * (x - *mean);
        }
        self.reward_scale()
    }

    pub fn reward_scale(&self) -> f64 {
        let (n, _, m2) = self.return_stats;
        if n < 2 {
            return 1.0;
        }
        let std = (m2 / (n - 1) as f64).sqrt();
        if std > 1e-8 {
            std
        } else {
            1.0
        }
    }
}

struct MinibatchStats {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    clipped: usize,
    approx_kl: f64,
}

/// Loss value, statistics and gradients (aligned with [`Policy::params`])
/// on the rows `idx` of a prepared batch.
fn minibatch_grads(
    policy: &Policy,
    batch: &PreparedBatch,
    idx: &[usize],
) -> Result<(f64, MinibatchStats, Vec<Matrix>)> {
    let cfg = &policy.cfg;
    let b = idx.len() as f64;
    let d_a = policy.act_dim();
    let obs = Matrix::from_vec(idx.len(), policy.obs_dim(), idx.iter().flat_map(|&i| batch.obs[i].iter().copied()).collect());

    let mut tape = Tape::new();
    let pi_vars = policy.mean_net.register(&mut tape);
    let x = tape.constant(obs);
    let mut mean = policy.mean_net.forward_tape(&mut tape, &pi_vars, x);
    if let Some(bound) = cfg.mean_bound {
        let squashed = tape.tanh(mean);
        mean = tape.scale(squashed, bound);
    }
    let mean_val = tape.value(mean).clone();

    let (lo, hi) = cfg.log_std_bounds();
    let log_std: Vec<f64> = policy.log_std.as_slice().iter().map(|l| l.clamp(lo, hi)).collect();
    let active: Vec<f64> = policy
        .log_std
        .as_slice()
        .iter()
        .map(|l| if *l > lo && *l < hi { 1.0 } else { 0.0 })
        .collect();
    let std: Vec<f64> = log_std.iter().map(|l| l.exp()).collect();

    let mut g_mean = Matrix::zeros(idx.len(), d_a);
    let mut g_log_std = vec![0.0; d_a];
    let mut policy_loss = 0.0;
    let mut clipped = 0;
    let mut approx_kl = 0.0;
    let eps = cfg.clip_eps;
    for (row, &i) in idx.iter().enumerate() {
        let a = &batch.actions[i];
        let mu = mean_val.row(row);
        let mut logp = 0.0;
        for j in 0..d_a {
            let z = (a[j] - mu[j]) / std[j];
            logp += -0.5 * z * z - log_std[j] - 0.5 * (2.0 * PI).ln();
        }
        let log_ratio = logp - batch.log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        policy_loss -= unclipped.min(clipped_obj);
        approx_kl += ratio - 1.0 - log_ratio;
        let is_clipped = (adv >= 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        if !is_clipped {
            // d(-ratio·A)/d logp = -ratio·A
            let dl = -ratio * adv / b;
            for j in 0..d_a {
                let z = (a[j] - mu[j]) / std[j];
                g_mean[(row, j)] += dl * z / std[j];
                g_log_std[j] += dl * (z * z - 1.0) * active[j];
            }
        }
    }
    let entropy: f64 = log_std.iter().map(|l| 0.5 * (2.0 * PI * E).ln() + l).sum();
    for j in 0..d_a {
        g_log_std[j] -= cfg.entropy_coef * active[j];
    }

    let mut value_loss = 0.0;
    let mut root = tape.dot_const(mean, g_mean);
    let use_value_net = cfg.baseline == BaselineKind::ValueNet;
    let vf_vars = policy.value_net.register(&mut tape);
    if use_value_net {
        let v = policy.value_net.forward_tape(&mut tape, &vf_vars, x);
        let vv = tape.value(v).clone();
        let mut g_v = Matrix::zeros(idx.len(), 1);
        for (row, &i) in idx.iter().enumerate() {
            let diff = vv[(row, 0)] - batch.returns[i];
            value_loss += diff * diff / b;
            g_v[(row, 0)] = cfg.value_coef * 2.0 * diff / b;
        }
        let vroot = tape.dot_const(v, g_v);
        root = tape.add(root, vroot);
    }
    let grads = tape.backward(root)?;
    let mut out = policy.mean_net.collect_grads(&grads, &pi_vars);
    out.push(Matrix::row_vector(&g_log_std));
    out.extend(policy.value_net.collect_grads(&grads, &vf_vars));

    policy_loss /= b;
    let loss = policy_loss - cfg.entropy_coef * entropy + cfg.value_coef * value_loss;
    Ok((
        loss,
        MinibatchStats {
            policy_loss,
            value_loss,
            entropy,
            clipped,
            approx_kl: approx_kl / b,
        },
        out,
    ))
}

struct PreparedBatch {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// Clipped-surrogate update over `epochs × minibatches` gradient steps.
/// Shuffling uses `rng`, so the update is deterministic for a fixed seed.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    trainer: &mut PpoTrainer,
    buffer: &RolloutBuffer,
    rng: &mut R,
) -> Result<PpoMetrics> {
    let cfg = policy.cfg.clone();
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let rewards = if cfg.scale_rewards {
        // reward-to-go, i.e. GAE with zero values and λ = 1
        let zeros = vec![0.0; buffer.len()];
        let (_, raw_returns) = compute_gae(&buffer.rewards, &zeros, &buffer.dones, 0.0, cfg.gamma, 1.0);
        let scale = trainer.update_reward_scale(&raw_returns);
        buffer.rewards.iter().map(|r| r / scale).collect()
    } else {
        buffer.rewards.clone()
    };
    let (mut advantages, returns) = compute_gae(
        &rewards,
        &buffer.values,
        &buffer.dones,
        buffer.last_value,
        cfg.gamma,
        cfg.gae_lambda,
    );
    if cfg.standardize_advantages {
        standardize(&mut advantages);
    }
    let batch = PreparedBatch {
        obs: buffer.obs.clone(),
        actions: buffer.actions.clone(),
        log_probs: buffer.log_probs.clone(),
        advantages,
        returns: returns.clone(),
    };
    let n = buffer.len();
    let k = cfg.minibatches.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut acc = PpoMetrics::default();
    let mut clipped_total = 0usize;
    let mut seen = 0usize;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for m in 0..k {
            let lo = m * n / k;
            let hi = (m + 1) * n / k;
            let idx = &order[lo..hi];
            let (loss, stats, grads) = minibatch_grads(policy, &batch, idx)?;
            let norm = global_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(PpoError::NonFiniteLoss);
            }
            trainer.adam.step(policy.params_mut(), &grads);
            acc.policy_loss += stats.policy_loss;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.approx_kl += stats.approx_kl;
            acc.grad_norm += norm;
            clipped_total += stats.clipped;
            seen += idx.len();
            steps += 1;
        }
    }
    let s = steps as f64;
    acc.policy_loss /= s;
    acc.value_loss /= s;
    acc.entropy /= s;
    acc.approx_kl /= s;
    acc.grad_norm /= s;
    acc.clip_fraction = clipped_total as f64 / seen as f64;
    if cfg.baseline == BaselineKind::LinearFeature {
        policy.linear_baseline.fit(&buffer.obs, &buffer.times, &returns);
    }
    Ok(acc)
}

/// Statistics of the surrogate at the current parameters without updating.
pub fn ppo_diagnostics(policy: &Policy, buffer: &RolloutBuffer) -> Result<PpoMetrics> {
    if buffer.is_empty() {
        return Err(PpoError::EmptyBuffer);
    }
    let cfg = &policy.cfg;
    let (mut advantages, returns) = compute_gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.dones,
        buffer.last_value,
        cfg.gamma,
        cfg.gae_lambda,
    );
    if cfg.standardize_advantages {
        standardize(&mut advantages);
    }
    let batch = PreparedBatch {
        obs: buffer.obs.clone(),
        actions: buffer.actions.clone(),
        log_probs: buffer.log_probs.clone(),
        advantages,
        returns,
    };
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let (_, stats, grads) = minibatch_grads(policy, &batch, &idx)?;
    Ok(PpoMetrics {
        policy_loss: stats.policy_loss,
        value_loss: stats.value_loss,
        entropy: stats.entropy,
        clip_fraction: stats.clipped as f64 / idx.len() as f64,
        approx_kl: stats.approx_kl,
        grad_norm: global_norm(&grads),
    })
}

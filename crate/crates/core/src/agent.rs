//! Per-task belief tracking, belief featurization and rollout collection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisNets, ModelPriors};
use crate::context::{Context, ContextBatch};
use crate::envs::{EnvError, TaskInstance};
use crate::linalg::Matrix;
use crate::nw::{known_noise_kl, nw_kl, ModelError};
use crate::ppo::{Policy, PpoError, RolloutBuffer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Policy(#[from] PpoError),
    #[error("environment error at step {step}: {source}")]
    Env {
        step: usize,
        #[source]
        source: EnvError,
    },
    #[error("context width mismatch: expected ({d_s}, {d_a})")]
    ContextWidth { d_s: usize, d_a: usize },
}

pub type Result<T> = std::result::Result<T, AgentError>;

impl ModelPriors {
    pub fn m_t(&self) -> &Matrix {
        match self {
            ModelPriors::NoiseInference { t, .. } => t.m(),
            ModelPriors::KnownNoise { t, .. } => t.m(),
        }
    }

    pub fn m_r(&self) -> &Matrix {
        match self {
            ModelPriors::NoiseInference { r, .. } => r.m(),
            ModelPriors::KnownNoise { r, .. } => r.m(),
        }
    }

    /// Online update of both blocks. Cached inverses get one Newton-Schulz
    /// refinement after every `refresh_every` updates (0 disables it).
    pub fn observe(&mut self, c_t: &[f64], c_r: &[f64], s_next: &[f64], r: f64, refresh_every: usize) -> std::result::Result<(), ModelError> {
        let due = |n: usize| refresh_every > 0 && n >= refresh_every;
        match self {
            ModelPriors::NoiseInference { t, r: rb } => {
                t.observe(c_t, s_next)?;
                rb.observe(c_r, &[r])?;
                if due(t.online_since_refresh()) {
                    t.refine_inverse();
                }
                if due(rb.online_since_refresh()) {
                    rb.refine_inverse();
                }
            }
            ModelPriors::KnownNoise { t, r: rb } => {
                t.observe(c_t, s_next)?;
                rb.observe(c_r, &[r])?;
                if due(t.online_since_refresh()) {
                    t.refine_inverse();
                }
                if due(rb.online_since_refresh()) {
                    rb.refine_inverse();
                }
            }
        }
        Ok(())
    }

    /// Batch posterior of both blocks given feature matrices.
    pub fn batch_posterior(&self, c_t: &Matrix, c_r: &Matrix, batch: &ContextBatch) -> std::result::Result<Self, ModelError> {
        Ok(match self {
            ModelPriors::NoiseInference { t, r } => ModelPriors::NoiseInference {
                t: t.batch_update(c_t, &batch.s_next)?,
                r: r.batch_update(c_r, &batch.r)?,
            },
            ModelPriors::KnownNoise { t, r } => ModelPriors::KnownNoise {
                t: t.batch_update(c_t, &batch.s_next)?,
                r: r.batch_update(c_r, &batch.r)?,
            },
        })
    }

    /// `(KL_T, KL_R)` of `self` from `prev`.
    pub fn kl_from(&self, prev: &ModelPriors) -> std::result::Result<(f64, f64), ModelError> {
        match (self, prev) {
            (ModelPriors::NoiseInference { t, r }, ModelPriors::NoiseInference { t: pt, r: pr }) => {
                Ok((nw_kl(t, pt)?, nw_kl(r, pr)?))
            }
            (ModelPriors::KnownNoise { t, r }, ModelPriors::KnownNoise { t: pt, r: pr }) => {
                Ok((known_noise_kl(t, pt)?, known_noise_kl(r, pr)?))
            }
            _ => Err(ModelError::InvalidHyperparameter("belief kinds differ")),
        }
    }

    /// Max-abs difference over the means and row precisions of both blocks.
    pub fn max_abs_diff(&self, other: &ModelPriors) -> f64 {
        let parts = |b: &ModelPriors| -> Vec<Matrix> {
            match b {
                ModelPriors::NoiseInference { t, r } => vec![
                    t.m().clone(),
                    t.xi().clone(),
                    t.omega().clone(),
                    r.m().clone(),
                    r.xi().clone(),
                    r.omega().clone(),
                ],
                ModelPriors::KnownNoise { t, r } => vec![t.m().clone(), t.xi().clone(), r.m().clone(), r.xi().clone()],
            }
        };
        parts(self)
            .iter()
            .zip(parts(other))
            .map(|(a, b)| if a.shape() == b.shape() { a.max_abs_diff(&b) } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Running per-coordinate mean and variance with clipping after standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub clip: f64,
    pub frozen: bool,
}

impl RunningNorm {
    pub fn new(dim: usize, clip: f64) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip,
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Welford update; ignored while frozen.
    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "normalizer width mismatch");
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|s| s / n).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(&self.mean)
            .zip(var)
            .map(|((v, m), s)| ((v - m) / (s + 1e-8).sqrt()).clamp(-self.clip, self.clip))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Online updates between cached-inverse refinements (0 disables).
    pub refresh_every: usize,
    /// Append belief features to the raw state.
    pub belief_features: bool,
    pub normalizer_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            refresh_every: 1000,
            belief_features: true,
            normalizer_clip: 10.0,
        }
    }
}

/// Length of the belief feature vector: `D_T(D_T+1)/2 + D_R`.
pub fn belief_feature_dim(d_t: usize, d_r: usize) -> usize {
    d_t * (d_t + 1) / 2 + d_r
}

/// Beliefs, the current task's contexts and the feature normalizer.
#[derive(Debug, Clone)]
pub struct AgentState {
    priors: ModelPriors,
    beliefs: ModelPriors,
    contexts: ContextBatch,
    pub normalizer: RunningNorm,
    cfg: AgentConfig,
}

impl AgentState {
    pub fn new(priors: ModelPriors, d_s: usize, d_a: usize, cfg: AgentConfig) -> Self {
        let (d_t, d_r) = priors.dims();
        Self {
            beliefs: priors.clone(),
            priors,
            contexts: ContextBatch::empty(d_s, d_a),
            normalizer: RunningNorm::new(belief_feature_dim(d_t, d_r), cfg.normalizer_clip),
            cfg,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn priors(&self) -> &ModelPriors {
        &self.priors
    }

    pub fn beliefs(&self) -> &ModelPriors {
        &self.beliefs
    }

    pub fn contexts(&self) -> &ContextBatch {
        &self.contexts
    }

    /// Restores the priors and clears the context buffer. The normalizer is
    /// kept.
    pub fn belief_reset(&mut self) {
        self.beliefs = self.priors.clone();
        self.contexts = ContextBatch::empty(self.contexts.d_s(), self.contexts.d_a());
    }

    /// Online update from one context using the current basis networks.
    pub fn observe(&mut self, ctx: &Context, nets: &BasisNets) -> Result<()> {
        if ctx.s.len() != self.contexts.d_s() || ctx.a.len() != self.contexts.d_a() || ctx.s_next.len() != self.contexts.d_s() {
            return Err(AgentError::ContextWidth {
                d_s: self.contexts.d_s(),
                d_a: self.contexts.d_a(),
            });
        }
        let (ct, cr) = nets.features_row(&ctx.s, &ctx.a, &ctx.s_next)?;
        self.observe_features(ctx, &ct, &cr)
    }

    /// Online update from precomputed feature rows.
    pub fn observe_features(&mut self, ctx: &Context, c_t: &[f64], c_r: &[f64]) -> Result<()> {
        self.beliefs
            .observe(c_t, c_r, &ctx.s_next, ctx.r, self.cfg.refresh_every)?;
        self.contexts.push(ctx);
        Ok(())
    }

    /// Lower triangle (row-wise, with diagonal) of `M_T M_Tᵀ` followed by `M_R`.
    pub fn raw_belief_features(&self) -> Vec<f64> {
        let mt = self.beliefs.m_t();
        let mut out = mt.matmul_t(mt).lower_triangle();
        out.extend_from_slice(self.beliefs.m_r().as_slice());
        out
    }

    /// Standardized and clipped belief features under the current statistics.
    pub fn policy_features(&self) -> Vec<f64> {
        self.normalizer.normalize(&self.raw_belief_features())
    }

    /// Policy input: raw state, followed by belief features when enabled.
    pub fn observation(&self, state: &[f64]) -> Vec<f64> {
        let mut obs = state.to_vec();
        if self.cfg.belief_features {
            obs.extend(self.policy_features());
        }
        obs
    }

    pub fn obs_dim(&self, d_s: usize) -> usize {
        if self.cfg.belief_features {
            d_s + self.normalizer.dim()
        } else {
            d_s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RolloutOptions {
    pub deterministic: bool,
    pub update_normalizer: bool,
    pub track_kl: bool,
}

/// One episode of experience.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub buffer: RolloutBuffer,
    pub contexts: ContextBatch,
    pub episode_return: f64,
    pub success: bool,
    /// Per-step `KL(b_{t+1} ‖ b_t)` for the transition and reward blocks.
    pub kl_t: Vec<f64>,
    pub kl_r: Vec<f64>,
}

/// Runs one full episode on `task`, resetting task and beliefs first.
pub fn collect_rollout<R: Rng + ?Sized>(
    agent: &mut AgentState,
    task: &mut TaskInstance,
    policy: &Policy,
    nets: &BasisNets,
    opts: RolloutOptions,
    rng: &mut R,
) -> Result<Rollout> {
    agent.belief_reset();
    let mut state = task.reset();
    let h = task.horizon();
    let bound = task.spec().action_bound();
    let mut buffer = RolloutBuffer::default();
    let mut episode_return = 0.0;
    let mut kl_t = Vec::new();
    let mut kl_r = Vec::new();
    for step in 0..h {
        if opts.update_normalizer && agent.cfg.belief_features {
            let raw = agent.raw_belief_features();
            agent.normalizer.update(&raw);
        }
        let obs = agent.observation(&state);
        let time = step as f64 / h as f64;
        let act = policy.act(&obs, time, opts.deterministic, rng)?;
        let out = task.step(&act.action).map_err(|source| AgentError::Env { step, source })?;
        let ctx = Context {
            s: state,
            a: act.action.iter().map(|v| v.clamp(-bound, bound)).collect(),
            s_next: out.s_next.clone(),
            r: out.r,
        };
        let prev = opts.track_kl.then(|| agent.beliefs.clone());
        agent.observe(&ctx, nets)?;
        if let Some(prev) = prev {
            let (a, b) = agent.beliefs.kl_from(&prev)?;
            kl_t.push(a);
            kl_r.push(b);
        }
        episode_return += out.r;
        buffer.push(obs, act.action, act.log_prob, out.r, act.value, out.done, time);
        state = out.s_next;
    }
    buffer.last_value = 0.0;
    Ok(Rollout {
        buffer,
        contexts: agent.contexts.clone(),
        episode_return,
        success: task.success(),
        kl_t,
        kl_r,
    })
}

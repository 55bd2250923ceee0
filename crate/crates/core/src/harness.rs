//! Experiment orchestration: the alternating collect / policy-update /
//! model-update loop, zero-shot evaluation, run artifacts and helpers for
//! ablations and latent-dimension sweeps.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{collect_rollout, AgentConfig, AgentState, RolloutOptions, RunningNorm};
use crate::basis::{init_networks, model_optimizer, train_step, BasisConfig, BasisNets, ModelLossConfig, ModelPriors};
use crate::container::{params_hash, put_belief, put_known_belief, Container, ContainerError};
use crate::context::ContextBatch;
use crate::envs::{FamilySpec, Split, TaskFamily};
use crate::metrics::{iqm, prediction_l1};
use crate::linalg::Matrix;
use crate::nw::{make_prior, KnownNoiseBelief, ModelError};
use crate::ppo::{ppo_update, Policy, PpoConfig, PpoMetrics, PpoTrainer, RolloutBuffer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error at step {step}: {message}")]
    Numerical { step: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("parameters changed during evaluation")]
    ParametersMutated,
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Container(ContainerError::ChecksumMismatch) => 3,
            HarnessError::Io(_) | HarnessError::Container(_) => 2,
            HarnessError::Numerical { .. } | HarnessError::ParametersMutated => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn numerical(step: usize, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Numerical {
        step,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub m0: f64,
    pub xi0: f64,
    pub omega0: f64,
    pub nu_t: f64,
    pub nu_r: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            m0: 0.0,
            xi0: 1.0,
            omega0: 1.0,
            nu_t: 40.0,
            nu_r: 2.0,
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub family: FamilySpec,
    pub seed: u64,
    /// Outer iterations of collect / policy update / model update.
    pub iterations: usize,
    /// Training tasks sampled per iteration.
    pub tasks_per_iter: usize,
    pub test_tasks: usize,
    pub eval_episodes: usize,
    pub eval_every: usize,
    pub eval_deterministic: bool,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub known_noise: bool,
    pub no_regularization: bool,
    pub train_policy: bool,
    pub train_model: bool,
    pub track_kl: bool,
    pub basis: BasisConfig,
    pub loss: ModelLossConfig,
    pub model_lr: f64,
    pub model_grad_epochs: usize,
    pub model_grad_steps: usize,
    /// Tasks per model gradient step.
    pub model_task_batch: usize,
    /// Most recent tasks kept for model training.
    pub model_replay_tasks: usize,
    pub prior: PriorConfig,
    pub ppo: PpoConfig,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: FamilySpec::point_goal(),
            seed: 0,
            iterations: 500,
            tasks_per_iter: 10,
            test_tasks: 20,
            eval_episodes: 1,
            eval_every: 25,
            eval_deterministic: true,
            checkpoint_every: 100,
            known_noise: false,
            no_regularization: false,
            train_policy: true,
            train_model: true,
            track_kl: true,
            basis: BasisConfig::default(),
            loss: ModelLossConfig::default(),
            model_lr: 2e-4,
            model_grad_epochs: 1,
            model_grad_steps: 20,
            model_task_batch: 8,
            model_replay_tasks: 40,
            prior: PriorConfig::default(),
            ppo: PpoConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copies family widths into the basis config and checks ranges.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.family.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.basis.d_s = cfg.family.d_s();
        cfg.basis.d_a = cfg.family.d_a();
        if cfg.no_regularization {
            cfg.loss.regularization_enabled = false;
        }
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if cfg.basis.d_t == 0 || cfg.basis.d_r == 0 {
            return bad("latent dimensions must be positive");
        }
        if cfg.tasks_per_iter == 0 {
            return bad("tasks_per_iter must be positive");
        }
        if cfg.model_task_batch == 0 || cfg.model_replay_tasks == 0 {
            return bad("model task batch and replay size must be positive");
        }
        if !(cfg.model_lr > 0.0) {
            return bad("model_lr must be positive");
        }
        if !(cfg.loss.lambda_t >= 0.0 && cfg.loss.lambda_r >= 0.0) {
            return bad("regularization weights must be nonnegative");
        }
        if cfg.prior.nu_t <= cfg.basis.d_s as f64 - 1.0 || cfg.prior.nu_r <= 0.0 {
            return bad("prior degrees of freedom must exceed P - 1");
        }
        if !(cfg.prior.xi0 > 0.0 && cfg.prior.omega0 > 0.0) {
            return bad("prior scales must be positive");
        }
        cfg.ppo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Builds the Normal-Wishart (or known-noise) priors for a resolved config.
pub fn build_priors(cfg: &RunConfig) -> Result<ModelPriors> {
    let p = &cfg.prior;
    let t = make_prior(cfg.basis.d_t, cfg.basis.d_s, p.m0, p.xi0, p.omega0, p.nu_t).map_err(|e| HarnessError::Config(e.to_string()))?;
    let r = make_prior(cfg.basis.d_r, 1, p.m0, p.xi0, p.omega0, p.nu_r).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(if cfg.known_noise {
        ModelPriors::KnownNoise {
            t: KnownNoiseBelief::from_nw(&t).map_err(|e| HarnessError::Config(e.to_string()))?,
            r: KnownNoiseBelief::from_nw(&r).map_err(|e| HarnessError::Config(e.to_string()))?,
        }
    } else {
        ModelPriors::NoiseInference { t, r }
    })
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub train_success: f64,
    pub train_return: f64,
    pub test_success: Option<f64>,
    pub test_return: Option<f64>,
    /// End-of-episode posterior applied to the same episode's contexts.
    pub trans_l1: Option<f64>,
    pub reward_l1: Option<f64>,
    /// End-of-episode posterior applied to a second episode of the same task.
    pub trans_l1_heldout: Option<f64>,
    pub reward_l1_heldout: Option<f64>,
    /// Each step predicted from the belief before observing it.
    pub trans_l1_online: Option<f64>,
    pub reward_l1_online: Option<f64>,
    pub kl_t: f64,
    pub kl_r: f64,
    pub model_loss: Option<f64>,
    pub model_grad_norm: Option<f64>,
    pub policy: Option<PpoMetrics>,
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub rows: Vec<MetricsRow>,
    pub nets: BasisNets,
    pub policy: Policy,
    pub normalizer: RunningNorm,
    pub dir: Option<PathBuf>,
    /// Model losses of every gradient step, in order.
    pub model_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 1,
    Rollout = 2,
    Ppo = 3,
    Model = 4,
    Eval = 5,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Freshly initialized networks, policy and agent for a resolved config.
pub fn init_run(cfg: &RunConfig) -> Result<(BasisNets, Policy, AgentState)> {
    let mut rng = stream_rng(cfg.seed, Stream::Init);
    let nets = init_networks(&cfg.basis, &mut rng);
    let priors = build_priors(cfg)?;
    let agent = AgentState::new(priors, cfg.basis.d_s, cfg.basis.d_a, cfg.agent);
    let policy = Policy::new(agent.obs_dim(cfg.basis.d_s), cfg.basis.d_a, &cfg.ppo, &mut rng);
    Ok((nets, policy, agent))
}

struct RunFiles {
    dir: PathBuf,
    metrics: File,
    timing: File,
}

impl RunFiles {
    fn create(dir: &Path, cfg: &RunConfig, config_text: Option<&str>) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        let files = Self {
            dir: dir.to_path_buf(),
            metrics: File::create(dir.join("metrics.jsonl"))?,
            timing: File::create(dir.join("timing.jsonl"))?,
        };
        files.write_manifest(cfg, config_text, "running", None)?;
        Ok(files)
    }

    fn write_manifest(&self, cfg: &RunConfig, config_text: Option<&str>, status: &str, error: Option<(usize, String)>) -> Result<()> {
        let manifest = serde_json::json!({
            "code_version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "status": status,
            "error": error.map(|(step, message)| serde_json::json!({"step": step, "message": message})),
            "config": cfg,
            "config_text": config_text,
        });
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(())
    }

    fn append(&mut self, row: &MetricsRow, seconds: f64) -> Result<()> {
        writeln!(self.metrics, "{}", serde_json::to_string(row).expect("row serializes"))?;
        writeln!(self.timing, "{}", serde_json::json!({"step": row.step, "wall_seconds": seconds}))?;
        Ok(())
    }
}

/// Serializes networks, policy, normalizer, priors and config.
pub fn checkpoint(cfg: &RunConfig, nets: &BasisNets, policy: &Policy, normalizer: &RunningNorm, priors: &ModelPriors) -> Container {
    let mut c = Container::new();
    c.put_text("config", &serde_json::to_string(cfg).expect("config serializes"));
    c.put_params("basis", &nets.param_names(), &nets.params());
    c.put_params("policy", &policy.param_names(), &policy.params());
    c.put_scalar("normalizer/count", normalizer.count as f64);
    c.put_vector("normalizer/mean", &normalizer.mean);
    c.put_vector("normalizer/m2", &normalizer.m2);
    match priors {
        ModelPriors::NoiseInference { t, r } => {
            put_belief(&mut c, "prior_t", t);
            put_belief(&mut c, "prior_r", r);
        }
        ModelPriors::KnownNoise { t, r } => {
            put_known_belief(&mut c, "prior_t", t);
            put_known_belief(&mut c, "prior_r", r);
        }
    }
    c
}

/// Trained artifacts restored from a checkpoint.
#[derive(Debug, Clone)]
pub struct Restored {
    pub config: RunConfig,
    pub nets: BasisNets,
    pub policy: Policy,
    pub normalizer: RunningNorm,
}

pub fn restore(c: &Container) -> Result<Restored> {
    let config: RunConfig = serde_json::from_str(c.get_text("config")?).map_err(|e| HarnessError::Config(e.to_string()))?;
    let (mut nets, mut policy, agent) = init_run(&config)?;
    let names = nets.param_names();
    c.get_params_into("basis", &names, nets.params_mut())?;
    let names = policy.param_names();
    c.get_params_into("policy", &names, policy.params_mut())?;
    let mut normalizer = agent.normalizer.clone();
    normalizer.count = c.get_scalar("normalizer/count")? as u64;
    normalizer.mean = c.get_vector("normalizer/mean")?;
    normalizer.m2 = c.get_vector("normalizer/m2")?;
    if normalizer.mean.len() != agent.normalizer.dim() || normalizer.m2.len() != agent.normalizer.dim() {
        return Err(HarnessError::Container(ContainerError::WrongKind("normalizer".into())));
    }
    Ok(Restored {
        config,
        nets,
        policy,
        normalizer,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// One-step-ahead L1 errors `(transition, reward)`: row `t` is predicted
/// with the belief formed from rows `0..t`, starting at `priors`.
pub fn prequential_l1(priors: &ModelPriors, c_t: &Matrix, c_r: &Matrix, batch: &ContextBatch, refresh_every: usize) -> std::result::Result<(f64, f64), ModelError> {
    let n = batch.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let mut belief = priors.clone();
    let (mut et, mut er) = (0.0, 0.0);
    for i in 0..n {
        let pt = Matrix::row_vector(c_t.row(i)).matmul(belief.m_t());
        let pr = Matrix::row_vector(c_r.row(i)).matmul(belief.m_r());
        et += pt.as_slice().iter().zip(batch.s_next.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        er += (pr.item() - batch.r[(i, 0)]).abs();
        belief.observe(c_t.row(i), c_r.row(i), batch.s_next.row(i), batch.r[(i, 0)], refresh_every)?;
    }
    Ok((et / n as f64, er / n as f64))
}

/// Zero-shot evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
    pub trans_l1: f64,
    pub reward_l1: f64,
    pub trans_l1_heldout: f64,
    pub reward_l1_heldout: f64,
    /// One-step-ahead errors along the first episode.
    pub trans_l1_online: f64,
    pub reward_l1_online: f64,
    pub per_task_success: Vec<f64>,
    pub per_task_trans_l1_heldout: Vec<f64>,
}

/// Evaluates on held-out test tasks without changing any parameters.
/// Beliefs still update within each episode. The normalizer is frozen.
#[allow(clippy::too_many_arguments)]
pub fn eval_zero_shot(
    cfg: &RunConfig,
    policy: &Policy,
    nets: &BasisNets,
    priors: &ModelPriors,
    normalizer: &RunningNorm,
    test_tasks: usize,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let hash_before = params_hash(&[nets.params(), policy.params()].concat());
    let family = TaskFamily::new(cfg.family.clone(), cfg.seed);
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut agent = AgentState::new(priors.clone(), cfg.basis.d_s, cfg.basis.d_a, cfg.agent);
    agent.normalizer = normalizer.clone();
    agent.normalizer.frozen = true;
    let opts = RolloutOptions {
        deterministic: cfg.eval_deterministic,
        update_normalizer: false,
        track_kl: false,
    };
    let mut successes = Vec::new();
    let mut returns = Vec::new();
    let (mut tl1, mut rl1, mut tl1h, mut rl1h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut tl1o, mut rl1o) = (Vec::new(), Vec::new());
    let mut per_task_success = Vec::new();
    let mut per_task_tl1h = Vec::new();
    for j in 0..test_tasks {
        let mut task = family.sample(Split::Test, j as u64);
        let mut task_success = Vec::new();
        let mut task_tl1h = Vec::new();
        for _ in 0..episodes.max(1) {
            let first = collect_rollout(&mut agent, &mut task, policy, nets, opts, &mut rng).map_err(|e| numerical(0, e))?;
            let post = agent.beliefs().clone();
            successes.push(if first.success { 1.0 } else { 0.0 });
            task_success.push(if first.success { 1.0 } else { 0.0 });
            returns.push(first.episode_return);
            let (ct, cr) = nets.features(&first.contexts).map_err(|e| numerical(0, e))?;
            tl1.push(prediction_l1(&ct, post.m_t(), &first.contexts.s_next));
            rl1.push(prediction_l1(&cr, post.m_r(), &first.contexts.r));
            let (to, ro) = prequential_l1(priors, &ct, &cr, &first.contexts, cfg.agent.refresh_every).map_err(|e| numerical(0, e))?;
            tl1o.push(to);
            rl1o.push(ro);
            let second = collect_rollout(&mut agent, &mut task, policy, nets, opts, &mut rng).map_err(|e| numerical(0, e))?;
            let (ct2, cr2) = nets.features(&second.contexts).map_err(|e| numerical(0, e))?;
            let th = prediction_l1(&ct2, post.m_t(), &second.contexts.s_next);
            tl1h.push(th);
            task_tl1h.push(th);
            rl1h.push(prediction_l1(&cr2, post.m_r(), &second.contexts.r));
        }
        per_task_success.push(mean(&task_success));
        per_task_tl1h.push(mean(&task_tl1h));
    }
    let hash_after = params_hash(&[nets.params(), policy.params()].concat());
    if hash_before != hash_after {
        return Err(HarnessError::ParametersMutated);
    }
    Ok(EvalResult {
        success_rate: mean(&successes),
        mean_return: mean(&returns),
        trans_l1: mean(&tl1),
        reward_l1: mean(&rl1),
        trans_l1_heldout: mean(&tl1h),
        reward_l1_heldout: mean(&rl1h),
        trans_l1_online: mean(&tl1o),
        reward_l1_online: mean(&rl1o),
        per_task_success,
        per_task_trans_l1_heldout: per_task_tl1h,
    })
}

/// Runs the full training loop. With `out` set, writes `manifest.json`,
/// `metrics.jsonl`, `timing.jsonl` and checkpoints there.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    run_experiment_with_text(cfg, out, None)
}

pub fn run_experiment_with_text(cfg: &RunConfig, out: Option<&Path>, config_text: Option<&str>) -> Result<RunOutput> {
    let cfg = cfg.resolved()?;
    let mut files = match out {
        Some(dir) => Some(RunFiles::create(dir, &cfg, config_text)?),
        None => None,
    };
    let result = train_loop(&cfg, files.as_mut());
    if let Some(f) = &files {
        match &result {
            Ok(_) => f.write_manifest(&cfg, config_text, "completed", None)?,
            Err(HarnessError::Numerical { step, message }) => {
                f.write_manifest(&cfg, config_text, "failed", Some((*step, message.clone())))?
            }
            Err(e) => f.write_manifest(&cfg, config_text, "failed", Some((0, e.to_string())))?,
        }
    }
    let mut output = result?;
    output.dir = out.map(Path::to_path_buf);
    Ok(output)
}

fn train_loop(cfg: &RunConfig, mut files: Option<&mut RunFiles>) -> Result<RunOutput> {
    let (mut nets, mut policy, mut agent) = init_run(cfg)?;
    let priors = agent.priors().clone();
    let family = TaskFamily::new(cfg.family.clone(), cfg.seed);
    let mut rollout_rng = stream_rng(cfg.seed, Stream::Rollout);
    let mut ppo_rng = stream_rng(cfg.seed, Stream::Ppo);
    let mut model_rng = stream_rng(cfg.seed, Stream::Model);
    let mut ppo_trainer = PpoTrainer::new(&cfg.ppo);
    let mut model_opt = model_optimizer(cfg.model_lr);
    let mut replay: Vec<ContextBatch> = Vec::new();
    let mut rows = Vec::new();
    let mut model_losses = Vec::new();
    let started = Instant::now();
    let opts = RolloutOptions {
        deterministic: false,
        update_normalizer: cfg.agent.belief_features,
        track_kl: cfg.track_kl,
    };

    for it in 0..cfg.iterations {
        let step = it + 1;
        let mut buffers = Vec::with_capacity(cfg.tasks_per_iter);
        let mut successes = Vec::new();
        let mut returns = Vec::new();
        let (mut kl_t, mut kl_r) = (Vec::new(), Vec::new());
        for k in 0..cfg.tasks_per_iter {
            let mut task = family.sample(Split::Train, (it * cfg.tasks_per_iter + k) as u64);
            let ro = collect_rollout(&mut agent, &mut task, &policy, &nets, opts, &mut rollout_rng).map_err(|e| numerical(step, e))?;
            successes.push(if ro.success { 1.0 } else { 0.0 });
            returns.push(ro.episode_return);
            kl_t.extend(&ro.kl_t);
            kl_r.extend(&ro.kl_r);
            replay.push(ro.contexts);
            buffers.push(ro.buffer);
        }
        if replay.len() > cfg.model_replay_tasks {
            let excess = replay.len() - cfg.model_replay_tasks;
            replay.drain(..excess);
        }

        let mut row = MetricsRow {
            step,
            train_success: mean(&successes),
            train_return: mean(&returns),
            kl_t: mean(&kl_t),
            kl_r: mean(&kl_r),
            ..MetricsRow::default()
        };

        if cfg.train_policy {
            let merged = RolloutBuffer::merge(&buffers);
            let m = ppo_update(&mut policy, &mut ppo_trainer, &merged, &mut ppo_rng).map_err(|e| numerical(step, e))?;
            row.policy = Some(m);
        }

        if cfg.train_model {
            let mut losses = Vec::new();
            let mut norms = Vec::new();
            let mut order: Vec<usize> = (0..replay.len()).collect();
            for _ in 0..cfg.model_grad_epochs {
                for _ in 0..cfg.model_grad_steps {
                    order.shuffle(&mut model_rng);
                    let batch: Vec<ContextBatch> = order
                        .iter()
                        .take(cfg.model_task_batch)
                        .map(|&i| replay[i].clone())
                        .collect();
                    let m = train_step(&mut nets, &mut model_opt, &priors, &batch, &cfg.loss).map_err(|e| numerical(step, e))?;
                    losses.push(m.loss);
                    norms.push(m.grad_norm);
                }
            }
            model_losses.extend(&losses);
            row.model_loss = Some(mean(&losses));
            row.model_grad_norm = Some(mean(&norms));
        }

        let eval_due = cfg.test_tasks > 0 && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.iterations);
        if eval_due {
            let ev = eval_zero_shot(cfg, &policy, &nets, &priors, &agent.normalizer, cfg.test_tasks, cfg.eval_episodes, cfg.seed)?;
            row.test_success = Some(ev.success_rate);
            row.test_return = Some(ev.mean_return);
            row.trans_l1 = Some(ev.trans_l1);
            row.reward_l1 = Some(ev.reward_l1);
            row.trans_l1_heldout = Some(ev.trans_l1_heldout);
            row.reward_l1_heldout = Some(ev.reward_l1_heldout);
            row.trans_l1_online = Some(ev.trans_l1_online);
            row.reward_l1_online = Some(ev.reward_l1_online);
        }

        if let Some(f) = files.as_deref_mut() {
            f.append(&row, started.elapsed().as_secs_f64())?;
            let last = step == cfg.iterations;
            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || last {
                let c = checkpoint(cfg, &nets, &policy, &agent.normalizer, &priors);
                c.write(&f.dir.join("checkpoints").join(format!("ckpt_{step:06}.nwbc")))?;
                if last {
                    c.write(&f.dir.join("final.nwbc"))?;
                }
            }
        }
        rows.push(row);
    }

    Ok(RunOutput {
        config: cfg.clone(),
        rows,
        nets,
        policy,
        normalizer: agent.normalizer,
        dir: None,
        model_losses,
    })
}

/// Reads the metrics rows of a run directory.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(dir.join("metrics.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Config(format!("bad metrics row: {e}"))))
        .collect()
}

/// Expected per-step KL between consecutive beliefs, per logged step, as
/// `(step, transition, reward)`.
pub fn kl_diagnostic(rows: &[MetricsRow]) -> Vec<(usize, f64, f64)> {
    rows.iter().map(|r| (r.step, r.kl_t, r.kl_r)).collect()
}

/// `KL(b_{t+1} ‖ b_t)` along a belief sequence, per block.
pub fn kl_sequence(beliefs: &[ModelPriors]) -> Result<Vec<(f64, f64)>> {
    beliefs
        .windows(2)
        .enumerate()
        .map(|(i, w)| w[1].kl_from(&w[0]).map_err(|e| numerical(i, e)))
        .collect()
}

/// Ablation arms: the full method, fixed known noise, and no feature penalty.
pub fn ablation_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut full = base.clone();
    full.known_noise = false;
    full.no_regularization = false;
    let mut known = full.clone();
    known.known_noise = true;
    let mut noreg = full.clone();
    noreg.no_regularization = true;
    vec![
        ("full".to_string(), full),
        ("known_noise".to_string(), known),
        ("no_reg".to_string(), noreg),
    ]
}

pub const SWEEP_D_T: [usize; 4] = [4, 8, 16, 32];
pub const SWEEP_D_R: [usize; 5] = [32, 64, 128, 256, 512];

/// Latent-dimension grid: every `D_T` with `D_R = 256`, then every `D_R`
/// with `D_T = 16`.
pub fn sweep_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut out = Vec::new();
    for d_t in SWEEP_D_T {
        let mut c = base.clone();
        c.basis.d_t = d_t;
        c.basis.d_r = 256;
        out.push((format!("dt{d_t}_dr256"), c));
    }
    for d_r in SWEEP_D_R {
        let mut c = base.clone();
        c.basis.d_t = 16;
        c.basis.d_r = d_r;
        out.push((format!("dt16_dr{d_r}"), c));
    }
    out
}

/// IQM of the last logged value of `f` across runs.
pub fn final_iqm(runs: &[RunOutput], f: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.rows.iter().rev().find_map(&f))
        .collect();
    iqm(&vals).ok()
}

/// Appends one JSON line to `path`.
pub fn append_jsonl(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{value}")?;
    Ok(())
}

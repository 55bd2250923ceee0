//! Learned basis functions and the marginal-likelihood model loss.
//!
//! Transition features `C_T = t_mix([s_feat(S), a_feat(A)])` and reward
//! features `C_R = r_mix([s_feat(S), a_feat(A), s_feat(S')])`. The state
//! feature network is one instance applied to both `S` and `S'`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, Tape, Var};
use crate::context::ContextBatch;
use crate::linalg::Matrix;
use crate::mlp::{global_norm, Activation, Adam, Mlp, MlpSpec, MlpVars, WeightInit};
use crate::nw::{KnownNoiseBelief, NWBelief};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("{what}: expected width {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: AutodiffError,
    },
    #[error("non-finite gradient (norm {0})")]
    NonFiniteGradient(f64),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, BasisError>;

/// Layer sizes and flags for [`BasisNets`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub d_s: usize,
    pub d_a: usize,
    pub d_t: usize,
    pub d_r: usize,
    pub s_feat_layers: Vec<usize>,
    pub s_feat_out: usize,
    pub a_feat_layers: Vec<usize>,
    pub a_feat_out: usize,
    pub t_mix_layers: Vec<usize>,
    pub r_mix_layers: Vec<usize>,
    pub t_mix_layernorm: bool,
    pub r_mix_layernorm: bool,
    pub activation: Activation,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            d_s: 2,
            d_a: 2,
            d_t: 16,
            d_r: 256,
            s_feat_layers: vec![64, 32],
            s_feat_out: 32,
            a_feat_layers: vec![32, 16],
            a_feat_out: 16,
            t_mix_layers: vec![64, 32],
            r_mix_layers: vec![128, 64],
            t_mix_layernorm: true,
            r_mix_layernorm: true,
            activation: Activation::Relu,
        }
    }
}

/// State, action and mixture networks.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisNets {
    config: BasisConfig,
    pub s_feat: Mlp,
    pub a_feat: Mlp,
    pub t_mix: Mlp,
    pub r_mix: Mlp,
}

/// Tape handles for one registration of [`BasisNets`].
#[derive(Debug, Clone)]
pub struct BasisVars {
    pub s_feat: MlpVars,
    pub a_feat: MlpVars,
    pub t_mix: MlpVars,
    pub r_mix: MlpVars,
}

/// Reproducible initialization for a fixed rng state.
pub fn init_networks<R: Rng + ?Sized>(config: &BasisConfig, rng: &mut R) -> BasisNets {
    let feat = |input, hidden: &[usize], output| MlpSpec {
        input,
        hidden: hidden.to_vec(),
        output,
        activation: config.activation,
        layer_norm: false,
        out_activation: true,
        init: WeightInit::HeNormal,
    };
    let mix = |input, hidden: &[usize], output, layer_norm| MlpSpec {
        input,
        hidden: hidden.to_vec(),
        output,
        activation: config.activation,
        layer_norm,
        out_activation: false,
        init: WeightInit::HeNormal,
    };
    let (fs, fa) = (config.s_feat_out, config.a_feat_out);
    let s_feat = Mlp::new(feat(config.d_s, &config.s_feat_layers, fs), rng);
    let a_feat = Mlp::new(feat(config.d_a, &config.a_feat_layers, fa), rng);
    let t_mix = Mlp::new(mix(fs + fa, &config.t_mix_layers, config.d_t, config.t_mix_layernorm), rng);
    let r_mix = Mlp::new(mix(2 * fs + fa, &config.r_mix_layers, config.d_r, config.r_mix_layernorm), rng);
    BasisNets {
        config: config.clone(),
        s_feat,
        a_feat,
        t_mix,
        r_mix,
    }
}

impl BasisNets {
    pub fn config(&self) -> &BasisConfig {
        &self.config
    }

    pub fn d_t(&self) -> usize {
        self.config.d_t
    }

    pub fn d_r(&self) -> usize {
        self.config.d_r
    }

    fn nets(&self) -> [&Mlp; 4] {
        [&self.s_feat, &self.a_feat, &self.t_mix, &self.r_mix]
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.nets().into_iter().flat_map(Mlp::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.s_feat.params_mut();
        out.extend(self.a_feat.params_mut());
        out.extend(self.t_mix.params_mut());
        out.extend(self.r_mix.params_mut());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = self.s_feat.param_names("s_feat");
        out.extend(self.a_feat.param_names("a_feat"));
        out.extend(self.t_mix.param_names("t_mix"));
        out.extend(self.r_mix.param_names("r_mix"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Panics if `theta` does not have [`BasisNets::num_params`] entries.
    pub fn set_flat_params(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_params(), "flat parameter length");
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.as_slice().len();
            p.as_mut_slice().copy_from_slice(&theta[off..off + n]);
            off += n;
        }
    }

    fn check_batch(&self, batch: &ContextBatch) -> Result<()> {
        if batch.d_s() != self.config.d_s {
            return Err(BasisError::DimensionMismatch {
                what: "state",
                expected: self.config.d_s,
                got: batch.d_s(),
            });
        }
        if batch.d_a() != self.config.d_a {
            return Err(BasisError::DimensionMismatch {
                what: "action",
                expected: self.config.d_a,
                got: batch.d_a(),
            });
        }
        Ok(())
    }

    /// Plain forward pass returning `(C_T, C_R)`.
    pub fn features(&self, batch: &ContextBatch) -> Result<(Matrix, Matrix)> {
        self.check_batch(batch)?;
        let fs = self.s_feat.forward(&batch.s);
        let fa = self.a_feat.forward(&batch.a);
        let fsn = self.s_feat.forward(&batch.s_next);
        let ct = self.t_mix.forward(&Matrix::hstack(&[&fs, &fa]));
        let cr = self.r_mix.forward(&Matrix::hstack(&[&fs, &fa, &fsn]));
        Ok((ct, cr))
    }

    /// Feature rows for a single transition.
    pub fn features_row(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = ContextBatch {
            s: Matrix::row_vector(s),
            a: Matrix::row_vector(a),
            s_next: Matrix::row_vector(s_next),
            r: Matrix::zeros(1, 1),
        };
        let (ct, cr) = self.features(&batch)?;
        Ok((ct.into_vec(), cr.into_vec()))
    }

    /// Registers all parameters on `tape` as leaves.
    pub fn register(&self, tape: &mut Tape) -> BasisVars {
        BasisVars {
            s_feat: self.s_feat.register(tape),
            a_feat: self.a_feat.register(tape),
            t_mix: self.t_mix.register(tape),
            r_mix: self.r_mix.register(tape),
        }
    }

    /// Recorded forward pass returning the `(C_T, C_R)` nodes.
    pub fn features_tape(&self, tape: &mut Tape, vars: &BasisVars, batch: &ContextBatch) -> Result<(Var, Var)> {
        self.check_batch(batch)?;
        let s = tape.constant(batch.s.clone());
        let a = tape.constant(batch.a.clone());
        let sn = tape.constant(batch.s_next.clone());
        let fs = self.s_feat.forward_tape(tape, &vars.s_feat, s);
        let fa = self.a_feat.forward_tape(tape, &vars.a_feat, a);
        let fsn = self.s_feat.forward_tape(tape, &vars.s_feat, sn);
        let ht = tape.concat_cols(&[fs, fa]);
        let ct = self.t_mix.forward_tape(tape, &vars.t_mix, ht);
        let hr = tape.concat_cols(&[fs, fa, fsn]);
        let cr = self.r_mix.forward_tape(tape, &vars.r_mix, hr);
        Ok((ct, cr))
    }

    /// `(C_T, C_R, tape)` with the computation recorded.
    pub fn forward_features(&self, batch: &ContextBatch) -> Result<(Matrix, Matrix, Tape)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let (ct, cr) = self.features_tape(&mut tape, &vars, batch)?;
        let out = (tape.value(ct).clone(), tape.value(cr).clone());
        Ok((out.0, out.1, tape))
    }

    /// Gradients aligned with [`BasisNets::params`].
    pub fn collect_grads(&self, grads: &Gradients, vars: &BasisVars) -> Vec<Matrix> {
        let mut out = self.s_feat.collect_grads(grads, &vars.s_feat);
        out.extend(self.a_feat.collect_grads(grads, &vars.a_feat));
        out.extend(self.t_mix.collect_grads(grads, &vars.t_mix));
        out.extend(self.r_mix.collect_grads(grads, &vars.r_mix));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelLossConfig {
    pub lambda_t: f64,
    pub lambda_r: f64,
    pub regularization_enabled: bool,
}

impl Default for ModelLossConfig {
    fn default() -> Self {
        Self {
            lambda_t: 5e-3,
            lambda_r: 1e-3,
            regularization_enabled: true,
        }
    }
}

impl ModelLossConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda_t >= 0.0 && self.lambda_r >= 0.0) {
            return Err(BasisError::InvalidConfig("regularization weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Priors entering the loss: unknown noise (Normal-Wishart) or fixed noise.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelPriors {
    NoiseInference { t: NWBelief, r: NWBelief },
    KnownNoise { t: KnownNoiseBelief, r: KnownNoiseBelief },
}

impl ModelPriors {
    pub fn is_known_noise(&self) -> bool {
        matches!(self, ModelPriors::KnownNoise { .. })
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelPriors::NoiseInference { t, r } => (t.d(), r.d()),
            ModelPriors::KnownNoise { t, r } => (t.d(), r.d()),
        }
    }
}

/// Negative reduced marginal log-likelihood of `Y` given features `c` as a
/// tape node. Matches `-marginal_ll_reduced` for the Normal-Wishart prior.
fn nw_block(tape: &mut Tape, c: Var, y: &Matrix, prior: &NWBelief) -> std::result::Result<Var, AutodiffError> {
    let p = y.cols() as f64;
    let n = y.rows() as f64;
    let xi0 = tape.constant(prior.xi().clone());
    let yv = tape.constant(y.clone());
    let m0 = tape.constant(prior.m().clone());
    let xi_m = tape.constant(prior.xi().matmul(prior.m()));
    let omega0 = tape.constant(prior.omega().clone());

    let ctc = tape.t_matmul(c, c);
    let xi_post = tape.add(ctc, xi0);
    let cty = tape.t_matmul(c, yv);
    let rhs = tape.add(cty, xi_m);
    let m_post = tape.solve_pd(xi_post, rhs)?;
    // Ω' = Ω + RᵀR + ΔᵀΞΔ with R = Y − CM', Δ = M' − M: a sum of PSD terms,
    // unlike the cancelling form Ω + YᵀY + MᵀΞM − M'ᵀΞ'M'
    let pred = tape.matmul(c, m_post);
    let resid = tape.sub(yv, pred);
    let rtr = tape.t_matmul(resid, resid);
    let delta = tape.sub(m_post, m0);
    let xi_delta = tape.matmul(xi0, delta);
    let dxd = tape.t_matmul(delta, xi_delta);
    let spread = tape.add(rtr, dxd);
    let omega_post = tape.add(omega0, spread);
    let ld_xi = tape.logdet_pd(xi_post)?;
    let ld_omega = tape.logdet_pd(omega_post)?;
    let nu_post = prior.nu() + n;
    // ½ (P log|Ξ'| + ν' (log|Ω'| − P ln 2))
    let a = tape.scale(ld_xi, 0.5 * p);
    let b = tape.scale(ld_omega, 0.5 * nu_post);
    let ab = tape.add(a, b);
    let shift = tape.constant(Matrix::scalar(-0.5 * nu_post * p * 2f64.ln()));
    Ok(tape.add(ab, shift))
}

/// Known-noise counterpart of [`nw_block`]: `½ (P log|Ξ'| − tr(Σ⁻¹ M'ᵀ Ξ' M'))`.
fn known_block(
    tape: &mut Tape,
    c: Var,
    y: &Matrix,
    prior: &KnownNoiseBelief,
) -> std::result::Result<Var, AutodiffError> {
    let p = y.cols() as f64;
    let xi0 = tape.constant(prior.xi().clone());
    let yv = tape.constant(y.clone());
    let xi_m = tape.constant(prior.xi().matmul(prior.m()));
    let ctc = tape.t_matmul(c, c);
    let xi_post = tape.add(ctc, xi0);
    let cty = tape.t_matmul(c, yv);
    let rhs = tape.add(cty, xi_m);
    let m_post = tape.solve_pd(xi_post, rhs)?;
    let quad = tape.t_matmul(rhs, m_post);
    let fit = tape.dot_const(quad, prior.sigma_inv().clone());
    let ld_xi = tape.logdet_pd(xi_post)?;
    let a = tape.scale(ld_xi, 0.5 * p);
    let b = tape.scale(fit, -0.5);
    Ok(tape.add(a, b))
}

/// Per-task loss from feature nodes: negative reduced marginals of `S'` and
/// `r` plus the Frobenius penalties.
pub fn task_loss_tape(
    tape: &mut Tape,
    c_t: Var,
    c_r: Var,
    batch: &ContextBatch,
    priors: &ModelPriors,
    cfg: &ModelLossConfig,
) -> std::result::Result<Var, AutodiffError> {
    let (lt, lr) = match priors {
        ModelPriors::NoiseInference { t, r } => (nw_block(tape, c_t, &batch.s_next, t)?, nw_block(tape, c_r, &batch.r, r)?),
        ModelPriors::KnownNoise { t, r } => (
            known_block(tape, c_t, &batch.s_next, t)?,
            known_block(tape, c_r, &batch.r, r)?,
        ),
    };
    let mut total = tape.add(lt, lr);
    if cfg.regularization_enabled {
        let st = tape.sum_squares(c_t);
        let sr = tape.sum_squares(c_r);
        let pt = tape.scale(st, cfg.lambda_t);
        let pr = tape.scale(sr, cfg.lambda_r);
        total = tape.add(total, pt);
        total = tape.add(total, pr);
    }
    Ok(total)
}

/// Recorded model loss ready for [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct ModelLoss {
    pub value: f64,
    pub per_task: Vec<f64>,
    pub tape: Tape,
    pub root: Var,
    pub vars: BasisVars,
}

/// Task-averaged regularized negative marginal log-likelihood.
pub fn model_loss(
    nets: &BasisNets,
    priors: &ModelPriors,
    tasks: &[ContextBatch],
    cfg: &ModelLossConfig,
) -> Result<ModelLoss> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(BasisError::InvalidConfig("model loss needs at least one task"));
    }
    let (d_t, d_r) = priors.dims();
    if d_t != nets.d_t() {
        return Err(BasisError::DimensionMismatch {
            what: "transition prior",
            expected: nets.d_t(),
            got: d_t,
        });
    }
    if d_r != nets.d_r() {
        return Err(BasisError::DimensionMismatch {
            what: "reward prior",
            expected: nets.d_r(),
            got: d_r,
        });
    }
    let mut tape = Tape::new();
    let vars = nets.register(&mut tape);
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut total: Option<Var> = None;
    for (i, batch) in tasks.iter().enumerate() {
        let (ct, cr) = nets.features_tape(&mut tape, &vars, batch)?;
        let l = task_loss_tape(&mut tape, ct, cr, batch, priors, cfg)
            .map_err(|source| BasisError::Task { task: i, source })?;
        per_task.push(tape.value(l).item());
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let root = tape.scale(total.expect("nonempty task list"), 1.0 / tasks.len() as f64);
    Ok(ModelLoss {
        value: tape.value(root).item(),
        per_task,
        tape,
        root,
        vars,
    })
}

/// Loss value and gradients aligned with [`BasisNets::params`].
pub fn model_loss_and_grads(
    nets: &BasisNets,
    priors: &ModelPriors,
    tasks: &[ContextBatch],
    cfg: &ModelLossConfig,
) -> Result<(f64, Vec<Matrix>)> {
    let loss = model_loss(nets, priors, tasks, cfg)?;
    let grads = loss.tape.backward(loss.root)?;
    Ok((loss.value, nets.collect_grads(&grads, &loss.vars)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub loss: f64,
    pub grad_norm: f64,
}

/// Adam at the default model learning rate, without clipping.
pub fn model_optimizer(lr: f64) -> Adam {
    Adam::new(lr, None)
}

/// One optimizer step on the model loss. A non-finite gradient leaves the
/// parameters untouched and returns an error.
pub fn train_step(
    nets: &mut BasisNets,
    opt: &mut Adam,
    priors: &ModelPriors,
    tasks: &[ContextBatch],
    cfg: &ModelLossConfig,
) -> Result<TrainMetrics> {
    let (loss, grads) = model_loss_and_grads(nets, priors, tasks, cfg)?;
    let grad_norm = global_norm(&grads);
    if !grad_norm.is_finite() || !loss.is_finite() {
        return Err(BasisError::NonFiniteGradient(grad_norm));
    }
    opt.step(nets.params_mut(), &grads);
    Ok(TrainMetrics { loss, grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nw::{known_noise_marginal_ll, make_prior, marginal_ll_reduced};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> BasisConfig {
        BasisConfig {
            d_s: 2,
            d_a: 1,
            d_t: 3,
            d_r: 4,
            s_feat_layers: vec![6],
            s_feat_out: 4,
            a_feat_layers: vec![3],
            a_feat_out: 2,
            t_mix_layers: vec![5],
            r_mix_layers: vec![5],
            ..BasisConfig::default()
        }
    }

    fn batch(n: usize, seed: u64) -> ContextBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        ContextBatch {
            s: g(n, 2),
            a: g(n, 1),
            s_next: g(n, 2),
            r: g(n, 1),
        }
    }

    fn nw_priors(cfg: &BasisConfig) -> ModelPriors {
        ModelPriors::NoiseInference {
            t: make_prior(cfg.d_t, cfg.d_s, 0.0, 1.0, 1.0, 40.0).unwrap(),
            r: make_prior(cfg.d_r, 1, 0.0, 1.0, 1.0, 2.0).unwrap(),
        }
    }

    #[test]
    fn loss_matches_closed_form_marginals() {
        let cfg = small_config();
        let nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = batch(7, 1);
        let priors = nw_priors(&cfg);
        let lc = ModelLossConfig::default();
        let loss = model_loss(&nets, &priors, std::slice::from_ref(&b), &lc).unwrap();
        let (ct, cr) = nets.features(&b).unwrap();
        let ModelPriors::NoiseInference { t, r } = &priors else { unreachable!() };
        let expected = -marginal_ll_reduced(t, &ct, &b.s_next).unwrap() - marginal_ll_reduced(r, &cr, &b.r).unwrap()
            + lc.lambda_t * ct.frobenius_sq()
            + lc.lambda_r * cr.frobenius_sq();
        assert!((loss.value - expected).abs() < 1e-9 * (1.0 + expected.abs()));

        let kp = ModelPriors::KnownNoise {
            t: KnownNoiseBelief::from_nw(t).unwrap(),
            r: KnownNoiseBelief::from_nw(r).unwrap(),
        };
        let kl = model_loss(&nets, &kp, std::slice::from_ref(&b), &lc).unwrap();
        let ModelPriors::KnownNoise { t: kt, r: kr } = &kp else { unreachable!() };
        let expected = -known_noise_marginal_ll(kt, &ct, &b.s_next).unwrap()
            - known_noise_marginal_ll(kr, &cr, &b.r).unwrap()
            + lc.lambda_t * ct.frobenius_sq()
            + lc.lambda_r * cr.frobenius_sq();
        assert!((kl.value - expected).abs() < 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn empty_task_gives_prior_constant() {
        let cfg = small_config();
        let nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let other = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let lc = ModelLossConfig {
            lambda_t: 0.0,
            lambda_r: 0.0,
            regularization_enabled: true,
        };
        let empty = ContextBatch::empty(2, 1);
        let priors = nw_priors(&cfg);
        let a = model_loss(&nets, &priors, std::slice::from_ref(&empty), &lc).unwrap().value;
        let b = model_loss(&other, &priors, std::slice::from_ref(&empty), &lc).unwrap().value;
        assert_eq!(a, b);
        // identity priors: log|Ξ| = log|Ω| = 0, so only the ½ν P ln 2 shift remains
        let expected = -0.5 * 40.0 * 2.0 * 2f64.ln() - 0.5 * 2.0 * 2f64.ln();
        assert!((a - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let cfg = small_config();
        let mut nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let n = nets.num_params();
        nets.set_flat_params(&vec![0.0; n]);
        let (ct, cr) = nets.features(&batch(4, 2)).unwrap();
        assert_eq!(ct.max_abs(), 0.0);
        assert_eq!(cr.max_abs(), 0.0);
        let (ct, cr) = nets.features(&ContextBatch::empty(2, 1)).unwrap();
        assert_eq!((ct.rows(), ct.cols(), cr.rows(), cr.cols()), (0, 3, 0, 4));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let nets = init_networks(&small_config(), &mut ChaCha8Rng::seed_from_u64(0));
        let bad = ContextBatch::empty(3, 1);
        assert!(matches!(
            nets.features(&bad),
            Err(BasisError::DimensionMismatch { what: "state", .. })
        ));
    }

    #[test]
    fn unregularized_loss_is_not_larger() {
        let cfg = small_config();
        let nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let tasks = [batch(5, 1), batch(6, 2)];
        let priors = nw_priors(&cfg);
        let on = model_loss(&nets, &priors, &tasks, &ModelLossConfig::default()).unwrap().value;
        let off_cfg = ModelLossConfig {
            regularization_enabled: false,
            ..ModelLossConfig::default()
        };
        let off = model_loss(&nets, &priors, &tasks, &off_cfg).unwrap().value;
        assert!(off < on);
    }

    #[test]
    fn default_dims_and_layouts() {
        let cfg = BasisConfig {
            d_s: 39,
            d_a: 4,
            ..BasisConfig::default()
        };
        let nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(nets.t_mix.output_dim(), 16);
        assert_eq!(nets.r_mix.output_dim(), 256);
        assert_eq!(nets.t_mix.input_dim(), 48);
        assert_eq!(nets.r_mix.input_dim(), 80);
        assert_eq!(nets.param_names().len(), nets.params().len());
    }

    #[test]
    fn train_step_rejects_non_finite() {
        let cfg = small_config();
        let mut nets = init_networks(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let mut b = batch(3, 1);
        b.s_next[(0, 0)] = f64::NAN;
        let before = nets.clone();
        let mut opt = model_optimizer(2e-4);
        let res = train_step(&mut nets, &mut opt, &nw_priors(&cfg), &[b], &ModelLossConfig::default());
        assert!(res.is_err());
        assert_eq!(nets, before);
    }
}

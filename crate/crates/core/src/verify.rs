//! Independent oracles and the self-check suite behind `nwbrl verify`.
//!
//! The oracles avoid the code paths they check: determinants come from LU
//! elimination, marginal likelihoods from numerical quadrature or dense
//! Gaussian densities, advantages from explicit double sums.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::Tape;
use crate::basis::{task_loss_tape, ModelLossConfig, ModelPriors};
use crate::context::ContextBatch;
use crate::linalg::Matrix;
use crate::metrics::{bootstrap_ci, iqm};
use crate::nw::{known_noise_marginal_ll_full, make_prior, marginal_ll_full, KnownNoiseBelief, NWBelief};
use crate::ppo::compute_gae;
use crate::special::ln_gamma;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// `(log|det A|, sign)` by LU elimination with partial pivoting.
pub fn lu_logdet(a: &Matrix) -> (f64, f64) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "lu_logdet needs a square matrix");
    let mut m = a.clone();
    let mut logdet = 0.0;
    let mut sign = 1.0;
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, m[(i, k)].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmax == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if piv != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            sign = -sign;
        }
        let d = m[(k, k)];
        if d < 0.0 {
            sign = -sign;
        }
        logdet += d.abs().ln();
        for i in k + 1..n {
            let f = m[(i, k)] / d;
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
        }
    }
    (logdet, sign)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs())).expect("nonempty");
        if piv != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            x.swap(k, piv);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[(k, j)] * x[j]).sum();
        x[k] = (x[k] - s) / m[(k, k)];
    }
    x
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Log marginal likelihood of a scalar Normal-Wishart model by 2-D
/// quadrature over the mean `μ` and log-precision `u = ln λ`.
///
/// Prior: `λ ~ Gamma(ν/2, rate Ω/2)`, `μ | λ ~ N(m, 1/(ξλ))`; likelihood
/// `y_i ~ N(c_i μ, 1/λ)`.
pub fn scalar_marginal_quadrature(m: f64, xi: f64, omega: f64, nu: f64, c: &[f64], y: &[f64]) -> f64 {
    let log_joint = |mu: f64, u: f64| -> f64 {
        let lam = u.exp();
        let a = 0.5 * nu;
        // Gamma(a, rate b) density in λ, times the Jacobian dλ/du = λ
        let log_gamma = a * (0.5 * omega).ln() - ln_gamma(a) + a * u - 0.5 * omega * lam;
        let log_mu = 0.5 * (xi * lam / (2.0 * PI)).ln() - 0.5 * xi * lam * (mu - m).powi(2);
        let log_lik: f64 = c
            .iter()
            .zip(y)
            .map(|(ci, yi)| 0.5 * (lam / (2.0 * PI)).ln() - 0.5 * lam * (yi - ci * mu).powi(2))
            .sum();
        log_gamma + log_mu + log_lik
    };
    // centre the integration box on the posterior
    let xi_post = xi + c.iter().map(|v| v * v).sum::<f64>();
    let m_post = (xi * m + c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()) / xi_post;
    let omega_post = omega + y.iter().map(|v| v * v).sum::<f64>() + xi * m * m - xi_post * m_post * m_post;
    let nu_post = nu + c.len() as f64;
    let lam_mode = (nu_post / omega_post).max(1e-12);
    let u0 = lam_mode.ln();
    let u_width = 12.0 / (0.5 * nu_post).sqrt().max(0.5);
    let (u_lo, u_hi) = (u0 - u_width.max(8.0), u0 + u_width.max(3.0));
    let reference = log_joint(m_post, u0);
    let inner = |u: f64| -> f64 {
        let sd = 1.0 / (xi_post * u.exp()).sqrt();
        let half = 14.0 * sd;
        simpson(&|mu: f64| (log_joint(mu, u) - reference).exp(), m_post - half, m_post + half, 1e-13)
    };
    let total = simpson(&inner, u_lo, u_hi, 1e-11);
    reference + total.ln()
}

/// Known-noise marginal as a dense Gaussian over `vec(Y)` (column stacking):
/// mean `vec(C M)`, covariance `Σ ⊗ (I + C Ξ⁻¹ Cᵀ)`.
pub fn known_noise_dense_marginal(prior: &KnownNoiseBelief, c: &Matrix, y: &Matrix) -> f64 {
    let (n, p) = (y.rows(), y.cols());
    let xi_inv_ct = {
        let d = prior.d();
        let mut out = Matrix::zeros(d, n);
        for i in 0..n {
            let col = lu_solve(prior.xi(), c.row(i));
            for (r, v) in col.iter().enumerate() {
                out[(r, i)] = *v;
            }
        }
        out
    };
    let k = c.matmul(&xi_inv_ct).add(&Matrix::identity(n));
    let sigma = prior.sigma();
    let mut cov = Matrix::zeros(n * p, n * p);
    for a in 0..p {
        for b in 0..p {
            for i in 0..n {
                for j in 0..n {
                    cov[(a * n + i, b * n + j)] = sigma[(a, b)] * k[(i, j)];
                }
            }
        }
    }
    let mean = c.matmul(prior.m());
    let mut r = vec![0.0; n * p];
    for a in 0..p {
        for i in 0..n {
            r[a * n + i] = y[(i, a)] - mean[(i, a)];
        }
    }
    let (logdet, _) = lu_logdet(&cov);
    let sol = lu_solve(&cov, &r);
    let quad: f64 = r.iter().zip(&sol).map(|(a, b)| a * b).sum();
    -0.5 * (n * p) as f64 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * quad
}

/// GAE by the explicit double sum `A_t = Σ_l (γλ)^l δ_{t+l}`, truncated at
/// the first episode end.
pub fn gae_brute_force(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |t: usize| -> f64 {
        let next = if dones[t] {
            0.0
        } else if t + 1 == n {
            last_value
        } else {
            values[t + 1]
        };
        rewards[t] + gamma * next - values[t]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..n - t {
                total += (gamma * lambda).powi(l as i32) * delta(t + l);
                if dones[t + l] {
                    break;
                }
            }
            total
        })
        .collect()
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data)
}

/// `A Aᵀ / n + shift·I`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, shift: f64, rng: &mut R) -> Matrix {
    let a = random_matrix(n, n, rng);
    let mut s = a.matmul_t(&a).scale(1.0 / n as f64);
    for i in 0..n {
        s[(i, i)] += shift;
    }
    s.symmetrized()
}

/// A random, well-conditioned Normal-Wishart belief.
pub fn random_belief<R: Rng + ?Sized>(d: usize, p: usize, rng: &mut R) -> NWBelief {
    let m = random_matrix(d, p, rng);
    let xi = random_spd(d, 0.5, rng);
    let omega = random_spd(p, 0.5, rng);
    let nu = p as f64 + 1.0 + 5.0 * rng.random::<f64>();
    NWBelief::new(m, xi, omega, nu).expect("random belief is valid")
}

/// Max deviation between sequential online updates and the batch posterior
/// over `instances` random problems.
pub fn check_conjugacy(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let d = rng.random_range(1..=8);
        let p = rng.random_range(1..=4);
        let n = rng.random_range(1..=20);
        let prior = random_belief(d, p, &mut rng);
        let c = random_matrix(n, d, &mut rng);
        let y = random_matrix(n, p, &mut rng);
        let batch = prior.batch_update(&c, &y).expect("batch update");
        let mut online = prior.clone();
        for i in 0..n {
            online.observe(c.row(i), y.row(i)).expect("online update");
        }
        let dev = [
            online.m().max_abs_diff(batch.m()),
            online.xi().max_abs_diff(batch.xi()),
            online.xi_inv().max_abs_diff(batch.xi_inv()),
            online.omega().max_abs_diff(batch.omega()),
            (online.nu() - batch.nu()).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    CheckResult::new(
        "conjugacy: online equals batch",
        worst < 1e-6,
        format!("{instances} instances, max-abs deviation {worst:.3e} (tol 1e-6)"),
    )
}

/// Scalar marginal vs quadrature over several seeded problems.
pub fn check_quadrature(cases: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let m0: f64 = StandardNormal.sample(&mut rng);
        let xi = 0.5 + rng.random::<f64>();
        let omega = 0.5 + rng.random::<f64>();
        let nu = 1.0 + 4.0 * rng.random::<f64>();
        let c: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let prior = NWBelief::new(Matrix::scalar(m0), Matrix::scalar(xi), Matrix::scalar(omega), nu).expect("scalar prior");
        let closed = marginal_ll_full(&prior, &Matrix::column_vector(&c), &Matrix::column_vector(&y)).expect("marginal");
        let quad = scalar_marginal_quadrature(m0, xi, omega, nu, &c, &y);
        worst = worst.max((closed - quad).abs());
    }
    CheckResult::new(
        "marginal likelihood vs 2-D quadrature",
        worst < 1e-3,
        format!("{cases} scalar cases, max |diff| {worst:.3e} (tol 1e-3)"),
    )
}

/// `log p(Y) = log p(Y₁) + log p(Y₂ | Y₁)` on random splits.
pub fn check_chain_identity(splits: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..splits {
        let d = rng.random_range(1..=6);
        let p = rng.random_range(1..=3);
        let n = rng.random_range(2..=16);
        let k = rng.random_range(1..n);
        let prior = random_belief(d, p, &mut rng);
        let c = random_matrix(n, d, &mut rng);
        let y = random_matrix(n, p, &mut rng);
        let first: Vec<usize> = (0..k).collect();
        let rest: Vec<usize> = (k..n).collect();
        let (c1, y1) = (c.select_rows(&first), y.select_rows(&first));
        let (c2, y2) = (c.select_rows(&rest), y.select_rows(&rest));
        let whole = marginal_ll_full(&prior, &c, &y).expect("marginal");
        let post = prior.batch_update(&c1, &y1).expect("update");
        let parts = marginal_ll_full(&prior, &c1, &y1).expect("marginal") + marginal_ll_full(&post, &c2, &y2).expect("marginal");
        worst = worst.max((whole - parts).abs());
    }
    CheckResult::new(
        "marginal likelihood chain identity",
        worst < 1e-8,
        format!("{splits} splits, max |diff| {worst:.3e} (tol 1e-8)"),
    )
}

/// Known-noise marginal vs the dense Gaussian density of `vec(Y)`.
pub fn check_known_noise_marginal(cases: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = rng.random_range(1..=5);
        let p = rng.random_range(1..=3);
        let n = rng.random_range(1..=8);
        let prior = KnownNoiseBelief::new(random_matrix(d, p, &mut rng), random_spd(d, 0.5, &mut rng), random_spd(p, 0.3, &mut rng))
            .expect("known-noise prior");
        let c = random_matrix(n, d, &mut rng);
        let y = random_matrix(n, p, &mut rng);
        let closed = known_noise_marginal_ll_full(&prior, &c, &y).expect("marginal");
        let dense = known_noise_dense_marginal(&prior, &c, &y);
        worst = worst.max((closed - dense).abs());
    }
    CheckResult::new(
        "known-noise marginal vs dense Gaussian",
        worst < 1e-8,
        format!("{cases} cases, max |diff| {worst:.3e} (tol 1e-8)"),
    )
}

fn random_batch<R: Rng + ?Sized>(n: usize, d_s: usize, d_a: usize, rng: &mut R) -> ContextBatch {
    ContextBatch {
        s: random_matrix(n, d_s, rng),
        a: random_matrix(n, d_a, rng),
        s_next: random_matrix(n, d_s, rng),
        r: random_matrix(n, 1, rng),
    }
}

/// Task-averaged loss and its gradient with respect to the stacked feature
/// matrices `[C_T⁽¹⁾, C_R⁽¹⁾, C_T⁽²⁾, …]` flattened.
pub fn feature_loss_and_grad(theta: &[f64], shapes: &[(usize, usize, usize)], tasks: &[ContextBatch], priors: &ModelPriors, cfg: &ModelLossConfig) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let mut off = 0;
    let mut leaves = Vec::new();
    let mut total = None;
    for (batch, &(n, d_t, d_r)) in tasks.iter().zip(shapes) {
        let ct = tape.leaf(Matrix::from_vec(n, d_t, theta[off..off + n * d_t].to_vec()));
        off += n * d_t;
        let cr = tape.leaf(Matrix::from_vec(n, d_r, theta[off..off + n * d_r].to_vec()));
        off += n * d_r;
        leaves.push(ct);
        leaves.push(cr);
        let l = task_loss_tape(&mut tape, ct, cr, batch, priors, cfg).expect("task loss");
        total = Some(match total {
            Some(t) => tape.add(t, l),
            None => l,
        });
    }
    let root = tape.scale(total.expect("tasks"), 1.0 / tasks.len() as f64);
    let grads = tape.backward(root).expect("backward");
    let g: Vec<f64> = leaves
        .iter()
        .flat_map(|v| grads.get(*v).expect("leaf gradient").as_slice().to_vec())
        .collect();
    (tape.value(root).item(), g)
}

/// Fourth-order central differences; relative error per coordinate is
/// `|a − fd| / max(|a|, |fd|, 1e-6)`.
pub fn max_relative_fd_error<F: Fn(&[f64]) -> (f64, Vec<f64>)>(f: F, theta: &[f64], h: f64) -> f64 {
    let (_, g) = f(theta);
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    let at = |probe: &mut Vec<f64>, i: usize, x: f64| {
        probe[i] = x;
        f(probe).0
    };
    for i in 0..theta.len() {
        let x = theta[i];
        let f2p = at(&mut probe, i, x + 2.0 * h);
        let f1p = at(&mut probe, i, x + h);
        let f1m = at(&mut probe, i, x - h);
        let f2m = at(&mut probe, i, x - 2.0 * h);
        probe[i] = x;
        let fd = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h);
        let denom = g[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((g[i] - fd).abs() / denom);
    }
    worst
}

/// Model-loss gradient vs finite differences in the feature matrices for
/// random noise-inference and known-noise problems with two tasks each.
pub fn check_model_gradients(configs: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..configs {
        let d_t = rng.random_range(1..=4);
        let d_r = rng.random_range(1..=6);
        let d_s = rng.random_range(1..=3);
        let d_a = rng.random_range(1..=2);
        let tasks: Vec<ContextBatch> = (0..2)
            .map(|_| {
                let n = rng.random_range(1..=8);
                random_batch(n, d_s, d_a, &mut rng)
            })
            .collect();
        let t = make_prior(d_t, d_s, 0.0, 1.0, 1.0, 40.0).expect("prior");
        let r = make_prior(d_r, 1, 0.0, 1.0, 1.0, 2.0).expect("prior");
        let priors = if k % 2 == 0 {
            ModelPriors::NoiseInference { t, r }
        } else {
            ModelPriors::KnownNoise {
                t: KnownNoiseBelief::from_nw(&t).expect("known"),
                r: KnownNoiseBelief::from_nw(&r).expect("known"),
            }
        };
        let cfg = ModelLossConfig::default();
        let shapes: Vec<(usize, usize, usize)> = tasks.iter().map(|b| (b.len(), d_t, d_r)).collect();
        let theta: Vec<f64> = shapes
            .iter()
            .flat_map(|&(n, a, b)| (0..n * (a + b)).map(|_| 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())
            .collect();
        let err = max_relative_fd_error(|th| feature_loss_and_grad(th, &shapes, &tasks, &priors, &cfg), &theta, 1e-4);
        worst = worst.max(err);
    }
    CheckResult::new(
        "model loss gradient vs finite differences",
        worst < 1e-4,
        format!("{configs} configurations, max relative error {worst:.3e} (tol 1e-4)"),
    )
}

/// The fixed IQM and bootstrap examples.
pub fn check_metric_examples() -> CheckResult {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    expect("iqm {1,2,3,4}", iqm(&[1.0, 2.0, 3.0, 4.0]) == Ok(2.5));
    expect("iqm constant", iqm(&[3.25; 7]) == Ok(3.25));
    expect("iqm {0,0,0,100}", iqm(&[0.0, 0.0, 0.0, 100.0]) == Ok(0.0));
    expect("iqm empty", iqm(&[]).is_err());
    expect("ci constant", bootstrap_ci(&[2.5; 8], 0.95, 2000, 7) == Ok((2.5, 2.5)));
    let v = [0.3, 0.9, 0.1, 0.5, 0.7, 0.2, 0.8];
    let p = iqm(&v).unwrap_or(f64::NAN);
    expect(
        "ci contains point",
        bootstrap_ci(&v, 0.95, 2000, 7).map(|(lo, hi)| lo <= p && p <= hi) == Ok(true),
    );
    expect("ci needs two values", bootstrap_ci(&[1.0], 0.95, 2000, 7).is_err());
    CheckResult::new(
        "iqm and bootstrap examples",
        failures.is_empty(),
        if failures.is_empty() {
            "all examples exact".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

/// Fraction of 95% intervals covering the population IQM (0 for a standard
/// normal) over `trials` samples of size `n`.
pub fn bootstrap_coverage(trials: usize, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for t in 0..trials {
        let sample: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&sample, 0.95, 2000, seed ^ (t as u64 + 1)).expect("bootstrap");
        if lo <= 0.0 && 0.0 <= hi {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

pub fn check_bootstrap_coverage(trials: usize, seed: u64) -> CheckResult {
    let cov = bootstrap_coverage(trials, 40, seed);
    CheckResult::new(
        "bootstrap coverage",
        (cov - 0.95).abs() <= 0.03,
        format!("{trials} trials of n=40 normal samples, coverage {cov:.3} (target 0.95 +- 0.03)"),
    )
}

/// GAE recursion vs brute force on random buffers.
pub fn check_gae(cases: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.random_range(1..=16);
        let r: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let last: f64 = StandardNormal.sample(&mut rng);
        let gamma = rng.random::<f64>();
        let lambda = rng.random::<f64>();
        let (adv, _) = compute_gae(&r, &v, &d, last, gamma, lambda);
        let bf = gae_brute_force(&r, &v, &d, last, gamma, lambda);
        for (a, b) in adv.iter().zip(&bf) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::new(
        "GAE recursion vs brute force",
        worst < 1e-10,
        format!("{cases} buffers, max |diff| {worst:.3e} (tol 1e-10)"),
    )
}

/// Every fast check, in a fixed order.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_conjugacy(100, seed),
        check_quadrature(10, seed),
        check_chain_identity(50, seed),
        check_known_noise_marginal(20, seed),
        check_model_gradients(20, seed),
        check_gae(200, seed),
        check_metric_examples(),
        check_bootstrap_coverage(1000, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_matches_hand_values() {
        let a = Matrix::from_rows(&[&[0.0, 2.0], &[3.0, 1.0]]);
        let (ld, sign) = lu_logdet(&a);
        assert!((ld - 6f64.ln()).abs() < 1e-15);
        assert_eq!(sign, -1.0);
        let x = lu_solve(&a, &[4.0, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let v = simpson(&|x: f64| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-12);
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn brute_force_gae_geometric() {
        let adv = gae_brute_force(&[1.0; 100], &[0.0; 100], &[false; 100], 0.0, 0.99, 1.0);
        assert!((adv[0] - (1.0 - 0.99f64.powi(100)) / 0.01).abs() < 1e-10);
    }
}

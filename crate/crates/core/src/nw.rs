//! Conjugate inference for linear models `Y = C·Mu + E`, rows of `E` drawn
//! i.i.d. from `N(0, Σ)`.
//!
//! [`NWBelief`] places a Normal-Wishart distribution on `(Mu, Σ)`:
//! `Mu | Σ ~ MN(M, Ξ⁻¹, Σ)` and `Σ⁻¹ ~ W(Ω⁻¹, ν)`. [`KnownNoiseBelief`] fixes
//! `Σ` and keeps only the matrix-Normal part.
//!
//! Both keep `Ξ⁻¹` and `log|Ξ|` cached. Batch updates refresh them from a
//! Cholesky factorization; single-row updates maintain them with the
//! Sherman-Morrison identity and the matrix determinant lemma, so the online
//! path never factors a `D×D` matrix.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{cholesky, JitterPolicy, LinalgError, Matrix};
use crate::special::{ln_mvgamma, mvdigamma};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degrees of freedom {nu} must exceed P - 1 = {}", *p as f64 - 1.0)]
    InvalidDof { nu: f64, p: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),
    #[error("dimension mismatch in {op}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("online update denominator {0:e} is degenerate")]
    DegenerateDenominator(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn check_shape(op: &'static str, m: &Matrix, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(ModelError::DimensionMismatch {
            op,
            expected,
            got: m.shape(),
        });
    }
    Ok(())
}

fn check_data(op: &'static str, d: usize, p: usize, c: &Matrix, y: &Matrix) -> Result<()> {
    check_shape(op, c, (c.rows(), d))?;
    check_shape(op, y, (c.rows(), p))
}

/// Normal-Wishart belief over one linear block (`D` features, `P` outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct NWBelief {
    m: Matrix,
    xi: Matrix,
    xi_inv: Matrix,
    xi_logdet: f64,
    omega: Matrix,
    nu: f64,
    online_since_refresh: usize,
}

impl NWBelief {
    /// Builds a belief from its four parameters; `Ξ⁻¹` is computed here.
    pub fn new(m: Matrix, xi: Matrix, omega: Matrix, nu: f64) -> Result<Self> {
        let (d, p) = m.shape();
        check_shape("NWBelief::new (Xi)", &xi, (d, d))?;
        check_shape("NWBelief::new (Omega)", &omega, (p, p))?;
        if !(nu > p as f64 - 1.0) {
            return Err(ModelError::InvalidDof { nu, p });
        }
        let chol = cholesky(&xi, &JitterPolicy::default())?;
        cholesky(&omega, &JitterPolicy::default())?;
        Ok(Self {
            m,
            xi_inv: chol.inverse(),
            xi_logdet: chol.logdet(),
            xi,
            omega,
            nu,
            online_since_refresh: 0,
        })
    }

    /// Restores a belief from every stored field, without refactoring.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        m: Matrix,
        xi: Matrix,
        xi_inv: Matrix,
        xi_logdet: f64,
        omega: Matrix,
        nu: f64,
        online_since_refresh: usize,
    ) -> Result<Self> {
        let (d, p) = m.shape();
        check_shape("NWBelief::from_parts (Xi)", &xi, (d, d))?;
        check_shape("NWBelief::from_parts (XiInv)", &xi_inv, (d, d))?;
        check_shape("NWBelief::from_parts (Omega)", &omega, (p, p))?;
        if !(nu > p as f64 - 1.0) {
            return Err(ModelError::InvalidDof { nu, p });
        }
        Ok(Self {
            m,
            xi,
            xi_inv,
            xi_logdet,
            omega,
            nu,
            online_since_refresh,
        })
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }
    pub fn xi(&self) -> &Matrix {
        &self.xi
    }
    pub fn xi_inv(&self) -> &Matrix {
        &self.xi_inv
    }
    pub fn xi_logdet(&self) -> f64 {
        self.xi_logdet
    }
    pub fn omega(&self) -> &Matrix {
        &self.omega
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    /// Feature dimension `D`.
    pub fn d(&self) -> usize {
        self.m.rows()
    }
    /// Output dimension `P`.
    pub fn p(&self) -> usize {
        self.m.cols()
    }
    /// Online updates applied since `Ξ⁻¹` was last recomputed or refined.
    pub fn online_since_refresh(&self) -> usize {
        self.online_since_refresh
    }

    /// `(ν Ω)⁻¹`, the noise covariance implied by the Wishart parameters.
    pub fn implied_noise(&self) -> Result<Matrix> {
        Ok(cholesky(&self.omega.scale(self.nu), &JitterPolicy::default())?.inverse())
    }

    /// Exact posterior after observing `N` rows.
    pub fn batch_update(&self, c: &Matrix, y: &Matrix) -> Result<Self> {
        check_data("batch_update", self.d(), self.p(), c, y)?;
        if c.rows() == 0 {
            return Ok(self.clone());
        }
        let n = c.rows();
        let xi_post = self.xi.add(&c.t_matmul(c)).symmetrized();
        let chol = cholesky(&xi_post, &JitterPolicy::default())?;
        let rhs = c.t_matmul(y).add(&self.xi.matmul(&self.m));
        let m_post = chol.solve(&rhs)?;
        // Ω + YᵀY + MᵀΞM − M'ᵀΞ'M' rearranged into PSD terms
        let resid = y.sub(&c.matmul(&m_post));
        let delta = m_post.sub(&self.m);
        let omega_post = self
            .omega
            .add(&resid.t_matmul(&resid))
            .add(&delta.t_matmul(&self.xi.matmul(&delta)))
            .symmetrized();
        Ok(Self {
            m: m_post,
            xi_inv: chol.inverse(),
            xi_logdet: chol.logdet(),
            xi: xi_post,
            omega: omega_post,
            nu: self.nu + n as f64,
            online_since_refresh: 0,
        })
    }

    /// Posterior after a single row, without factorizing anything.
    pub fn online_update(&self, c: &[f64], y: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.observe(c, y)?;
        Ok(next)
    }

    /// In-place single-row update. Cost is `O(D² + DP + P²)`.
    ///
    /// With `k = Ξ⁻¹cᵀ`, `q = c k` and innovation `e = y − cM`:
    /// `M' = M + k e / (1+q)`, `Ξ'⁻¹ = Ξ⁻¹ − k kᵀ / (1+q)`,
    /// `Ω' = Ω + eᵀe / (1+q)`, `log|Ξ'| = log|Ξ| + ln(1+q)`.
    pub fn observe(&mut self, c: &[f64], y: &[f64]) -> Result<()> {
        let (d, p) = (self.d(), self.p());
        if c.len() != d || y.len() != p {
            return Err(ModelError::DimensionMismatch {
                op: "online_update",
                expected: (d, p),
                got: (c.len(), y.len()),
            });
        }
        let (denom, e) = rank_one_step(&mut self.m, &mut self.xi_inv, &mut self.xi, c, y)?;
        for i in 0..p {
            let ei = e[i] / denom;
            for j in 0..p {
                self.omega[(i, j)] += ei * e[j];
            }
        }
        self.omega.symmetrize();
        self.xi_logdet += denom.ln();
        self.nu += 1.0;
        self.online_since_refresh += 1;
        Ok(())
    }

    /// One Newton-Schulz step `X ← X(2I − ΞX)` on the cached inverse. Squares
    /// the residual `I − ΞX`; uses matrix products only.
    pub fn refine_inverse(&mut self) {
        self.xi_inv = newton_schulz_step(&self.xi, &self.xi_inv);
        self.online_since_refresh = 0;
    }

    /// Recomputes `Ξ⁻¹` and `log|Ξ|` from a fresh factorization.
    pub fn recompute_inverse(&mut self) -> Result<()> {
        let chol = cholesky(&self.xi, &JitterPolicy::default())?;
        self.xi_inv = chol.inverse();
        self.xi_logdet = chol.logdet();
        self.online_since_refresh = 0;
        Ok(())
    }

    /// Posterior mean prediction `c M`.
    pub fn predictive_mean(&self, c: &[f64]) -> Vec<f64> {
        predictive_mean_impl(&self.m, c)
    }

    /// `log p(y | c)` under the posterior predictive (matrix-t with one row).
    pub fn predictive_logpdf(&self, c: &[f64], y: &[f64]) -> Result<f64> {
        marginal_ll_full(self, &Matrix::row_vector(c), &Matrix::row_vector(y))
    }

    /// Draws `(Mu, Σ)`: `Σ⁻¹ ~ W(Ω⁻¹, ν)` by the Bartlett decomposition, then
    /// `Mu ~ MN(M, Ξ⁻¹, Σ)`.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Matrix, Matrix)> {
        let (d, p) = (self.d(), self.p());
        let jitter = JitterPolicy::default();
        let scale_chol = cholesky(&cholesky(&self.omega, &jitter)?.inverse(), &jitter)?;
        let mut bartlett = Matrix::zeros(p, p);
        for i in 0..p {
            let chi = ChiSquared::new(self.nu - i as f64)
                .map_err(|_| ModelError::InvalidDof { nu: self.nu, p })?;
            bartlett[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let la = scale_chol.factor().matmul(&bartlett);
        let precision = la.matmul_t(&la).symmetrized();
        let sigma = cholesky(&precision, &jitter)?.inverse();

        let row_chol = cholesky(&self.xi_inv, &jitter)?;
        let col_chol = cholesky(&sigma, &jitter)?;
        let z = Matrix::from_vec(d, p, (0..d * p).map(|_| rng.sample(StandardNormal)).collect());
        let mu = self
            .m
            .add(&row_chol.factor().matmul(&z).matmul_t(col_chol.factor()));
        Ok((mu, sigma))
    }

    /// Log density of the belief at `(Mu, Σ)`.
    pub fn logpdf(&self, mu: &Matrix, sigma: &Matrix) -> Result<f64> {
        let (d, p) = (self.d() as f64, self.p() as f64);
        let jitter = JitterPolicy::default();
        let sig_chol = cholesky(sigma, &jitter)?;
        let precision = sig_chol.inverse();
        let logdet_sigma = sig_chol.logdet();
        let delta = mu.sub(&self.m);
        let quad = precision.matmul(&delta.t_matmul(&self.xi.matmul(&delta))).trace();
        let mn = -0.5 * d * p * (2.0 * PI).ln() + 0.5 * p * self.xi_logdet
            - 0.5 * d * logdet_sigma
            - 0.5 * quad;
        // W(Λ | Ω⁻¹, ν) with Λ = Σ⁻¹ and log|Λ| = −log|Σ|
        let omega_logdet = cholesky(&self.omega, &jitter)?.logdet();
        let wish = 0.5 * (self.nu - p - 1.0) * (-logdet_sigma)
            - 0.5 * self.omega.matmul(&precision).trace()
            - 0.5 * self.nu * p * 2f64.ln()
            + 0.5 * self.nu * omega_logdet
            - ln_mvgamma(self.p(), 0.5 * self.nu);
        Ok(mn + wish)
    }
}

/// Shared rank-one step for both belief kinds. Updates `M`, `Ξ⁻¹`, `Ξ` and
/// returns the scalar denominator `1 + c Ξ⁻¹ cᵀ` with the innovation `y − cM`.
fn rank_one_step(
    m: &mut Matrix,
    xi_inv: &mut Matrix,
    xi: &mut Matrix,
    c: &[f64],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let d = c.len();
    let p = y.len();
    let mut k = vec![0.0; d];
    for (i, ki) in k.iter_mut().enumerate() {
        *ki = crate::linalg::dot(xi_inv.row(i), c);
    }
    let q = crate::linalg::dot(c, &k);
    let denom = 1.0 + q;
    if !(denom > 1e-12) || !denom.is_finite() {
        return Err(ModelError::DegenerateDenominator(denom));
    }
    let pred = predictive_mean_impl(m, c);
    let e: Vec<f64> = y.iter().zip(&pred).map(|(yv, pv)| yv - pv).collect();
    for i in 0..d {
        let ki = k[i] / denom;
        if ki == 0.0 {
            continue;
        }
        let row = m.row_mut(i);
        for j in 0..p {
            row[j] += ki * e[j];
        }
    }
    // u uᵀ with u = k/√(1+q) is bitwise symmetric, so no strided
    // re-symmetrization pass is needed
    let root = denom.sqrt();
    let u: Vec<f64> = k.iter().map(|v| v / root).collect();
    crate::linalg::sym_rank_update_in_place(xi_inv, &u, -1.0);
    crate::linalg::sym_rank_update_in_place(xi, c, 1.0);
    Ok((denom, e))
}

fn predictive_mean_impl(m: &Matrix, c: &[f64]) -> Vec<f64> {
    assert_eq!(c.len(), m.rows(), "feature length mismatch");
    let p = m.cols();
    let mut out = vec![0.0; p];
    for (i, &ci) in c.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        for (o, mv) in out.iter_mut().zip(m.row(i)) {
            *o += ci * mv;
        }
    }
    out
}

fn newton_schulz_step(a: &Matrix, x: &Matrix) -> Matrix {
    let n = a.rows();
    let ax = a.matmul(x);
    let mut two_minus = ax.scale(-1.0);
    for i in 0..n {
        two_minus[(i, i)] += 2.0;
    }
    x.matmul(&two_minus).symmetrized()
}

/// Prior with `M = m0·1`, `Ξ = xi0·I`, `Ω = omega0·I`, `ν = nu0`.
pub fn make_prior(d: usize, p: usize, m0: f64, xi0: f64, omega0: f64, nu0: f64) -> Result<NWBelief> {
    if !(xi0 > 0.0) {
        return Err(ModelError::InvalidHyperparameter("xi0 must be positive"));
    }
    if !(omega0 > 0.0) {
        return Err(ModelError::InvalidHyperparameter("omega0 must be positive"));
    }
    if !(nu0 > p as f64 - 1.0) {
        return Err(ModelError::InvalidDof { nu: nu0, p });
    }
    Ok(NWBelief {
        m: Matrix::filled(d, p, m0),
        xi: Matrix::scaled_identity(d, xi0),
        xi_inv: Matrix::scaled_identity(d, 1.0 / xi0),
        xi_logdet: d as f64 * xi0.ln(),
        omega: Matrix::scaled_identity(p, omega0),
        nu: nu0,
        online_since_refresh: 0,
    })
}

/// `log MN(Y | C Mu, I_N, Σ)`.
pub fn likelihood_logpdf(mu: &Matrix, sigma: &Matrix, c: &Matrix, y: &Matrix) -> Result<f64> {
    let (d, p) = mu.shape();
    check_shape("likelihood_logpdf (Sigma)", sigma, (p, p))?;
    check_data("likelihood_logpdf", d, p, c, y)?;
    let n = c.rows() as f64;
    let chol = cholesky(sigma, &JitterPolicy::default())?;
    let resid = y.sub(&c.matmul(mu));
    let quad = chol.inverse().matmul(&resid.t_matmul(&resid)).trace();
    Ok(-0.5 * n * p as f64 * (2.0 * PI).ln() - 0.5 * n * chol.logdet() - 0.5 * quad)
}

/// Shorthand for [`NWBelief::batch_update`].
pub fn batch_update(prior: &NWBelief, c: &Matrix, y: &Matrix) -> Result<NWBelief> {
    prior.batch_update(c, y)
}

/// Shorthand for [`NWBelief::online_update`].
pub fn online_update(belief: &NWBelief, c: &[f64], y: &[f64]) -> Result<NWBelief> {
    belief.online_update(c, y)
}

/// `−½ (P log|Ξ'| + ν' log|½Ω'|)`, the marginal log-likelihood with every
/// term that does not depend on `C` dropped.
pub fn marginal_ll_reduced(prior: &NWBelief, c: &Matrix, y: &Matrix) -> Result<f64> {
    let post = prior.batch_update(c, y)?;
    let p = prior.p() as f64;
    let omega_logdet = cholesky(&post.omega, &JitterPolicy::default())?.logdet();
    Ok(-0.5 * (p * post.xi_logdet + post.nu * (omega_logdet - p * 2f64.ln())))
}

/// Exact `log p(Y | C)` with `(Mu, Σ)` integrated out.
///
/// `−(NP/2) ln π + (P/2)(log|Ξ| − log|Ξ'|) + (ν/2) log|Ω| − (ν'/2) log|Ω'|
///  + ln Γ_P(ν'/2) − ln Γ_P(ν/2)`.
pub fn marginal_ll_full(prior: &NWBelief, c: &Matrix, y: &Matrix) -> Result<f64> {
    check_data("marginal_ll_full", prior.d(), prior.p(), c, y)?;
    let n = c.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let post = prior.batch_update(c, y)?;
    let jitter = JitterPolicy::default();
    let p = prior.p();
    let pf = p as f64;
    let omega0 = cholesky(&prior.omega, &jitter)?.logdet();
    let omega1 = cholesky(&post.omega, &jitter)?.logdet();
    Ok(-0.5 * n as f64 * pf * PI.ln() + 0.5 * pf * (prior.xi_logdet - post.xi_logdet)
        + 0.5 * prior.nu * omega0
        - 0.5 * post.nu * omega1
        + ln_mvgamma(p, 0.5 * post.nu)
        - ln_mvgamma(p, 0.5 * prior.nu))
}

/// `KL(q ‖ p)` between Normal-Wishart beliefs of equal shape.
///
/// Wishart part plus the expectation under `q` of the matrix-Normal KL
/// conditioned on the shared column covariance.
pub fn nw_kl(q: &NWBelief, p: &NWBelief) -> Result<f64> {
    if q.m.shape() != p.m.shape() {
        return Err(ModelError::DimensionMismatch {
            op: "nw_kl",
            expected: p.m.shape(),
            got: q.m.shape(),
        });
    }
    let d = q.d() as f64;
    let pdim = q.p();
    let pf = pdim as f64;
    let jitter = JitterPolicy::default();

    // tr(Ξ_p Ξ_q⁻¹) for symmetric operands is the elementwise inner product
    let tr_xi: f64 = crate::linalg::dot(p.xi.as_slice(), q.xi_inv.as_slice());
    let q_omega = cholesky(&q.omega, &jitter)?;
    let q_omega_inv = q_omega.inverse();
    let p_omega_logdet = cholesky(&p.omega, &jitter)?.logdet();
    let delta = q.m.sub(&p.m);
    let quad = q_omega_inv
        .matmul(&delta.t_matmul(&p.xi.matmul(&delta)))
        .trace();
    let mn = 0.5 * (pf * tr_xi - d * pf + pf * (q.xi_logdet - p.xi_logdet) + q.nu * quad);

    let tr_omega = crate::linalg::dot(p.omega.as_slice(), q_omega_inv.as_slice());
    let wish = -0.5 * p.nu * (p_omega_logdet - q_omega.logdet())
        + 0.5 * q.nu * (tr_omega - pf)
        + ln_mvgamma(pdim, 0.5 * p.nu)
        - ln_mvgamma(pdim, 0.5 * q.nu)
        + 0.5 * (q.nu - p.nu) * mvdigamma(pdim, 0.5 * q.nu);
    Ok((mn + wish).max(0.0))
}

/// `KL(q ‖ p)` between matrix-Normal beliefs sharing the known `Σ`.
pub fn known_noise_kl(q: &KnownNoiseBelief, p: &KnownNoiseBelief) -> Result<f64> {
    if q.m.shape() != p.m.shape() {
        return Err(ModelError::DimensionMismatch {
            op: "known_noise_kl",
            expected: p.m.shape(),
            got: q.m.shape(),
        });
    }
    let d = q.d() as f64;
    let pf = q.p() as f64;
    let tr_xi: f64 = crate::linalg::dot(p.xi.as_slice(), q.xi_inv.as_slice());
    let delta = q.m.sub(&p.m);
    let quad = crate::linalg::dot(
        q.sigma_inv.as_slice(),
        delta.t_matmul(&p.xi.matmul(&delta)).as_slice(),
    );
    Ok((0.5 * (pf * tr_xi - d * pf + pf * (q.xi_logdet - p.xi_logdet) + quad)).max(0.0))
}

/// Matrix-Normal belief with a fixed, known column covariance `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownNoiseBelief {
    m: Matrix,
    xi: Matrix,
    xi_inv: Matrix,
    xi_logdet: f64,
    sigma: Matrix,
    sigma_inv: Matrix,
    online_since_refresh: usize,
}

impl KnownNoiseBelief {
    pub fn new(m: Matrix, xi: Matrix, sigma: Matrix) -> Result<Self> {
        let (d, p) = m.shape();
        check_shape("KnownNoiseBelief::new (Xi)", &xi, (d, d))?;
        check_shape("KnownNoiseBelief::new (Sigma)", &sigma, (p, p))?;
        let jitter = JitterPolicy::default();
        let chol = cholesky(&xi, &jitter)?;
        let sigma_inv = cholesky(&sigma, &jitter)?.inverse();
        Ok(Self {
            m,
            xi_inv: chol.inverse(),
            xi_logdet: chol.logdet(),
            xi,
            sigma,
            sigma_inv,
            online_since_refresh: 0,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        m: Matrix,
        xi: Matrix,
        xi_inv: Matrix,
        xi_logdet: f64,
        sigma: Matrix,
        sigma_inv: Matrix,
        online_since_refresh: usize,
    ) -> Result<Self> {
        let (d, p) = m.shape();
        check_shape("KnownNoiseBelief::from_parts (Xi)", &xi, (d, d))?;
        check_shape("KnownNoiseBelief::from_parts (XiInv)", &xi_inv, (d, d))?;
        check_shape("KnownNoiseBelief::from_parts (Sigma)", &sigma, (p, p))?;
        check_shape("KnownNoiseBelief::from_parts (SigmaInv)", &sigma_inv, (p, p))?;
        Ok(Self {
            m,
            xi,
            xi_inv,
            xi_logdet,
            sigma,
            sigma_inv,
            online_since_refresh,
        })
    }

    /// Known-noise counterpart of a Normal-Wishart prior: same `M`, `Ξ`, and
    /// `Σ = (ν Ω)⁻¹`.
    pub fn from_nw(prior: &NWBelief) -> Result<Self> {
        Self::new(prior.m.clone(), prior.xi.clone(), prior.implied_noise()?)
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }
    pub fn xi(&self) -> &Matrix {
        &self.xi
    }
    pub fn xi_inv(&self) -> &Matrix {
        &self.xi_inv
    }
    pub fn xi_logdet(&self) -> f64 {
        self.xi_logdet
    }
    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }
    pub fn sigma_inv(&self) -> &Matrix {
        &self.sigma_inv
    }
    pub fn d(&self) -> usize {
        self.m.rows()
    }
    pub fn p(&self) -> usize {
        self.m.cols()
    }
    pub fn online_since_refresh(&self) -> usize {
        self.online_since_refresh
    }

    /// Posterior `M'`, `Ξ'`; `Σ` is unchanged.
    pub fn batch_update(&self, c: &Matrix, y: &Matrix) -> Result<Self> {
        check_data("known_noise_update", self.d(), self.p(), c, y)?;
        if c.rows() == 0 {
            return Ok(self.clone());
        }
        let xi_post = self.xi.add(&c.t_matmul(c)).symmetrized();
        let chol = cholesky(&xi_post, &JitterPolicy::default())?;
        let rhs = c.t_matmul(y).add(&self.xi.matmul(&self.m));
        let m_post = chol.solve(&rhs)?;
        Ok(Self {
            m: m_post,
            xi: xi_post,
            xi_inv: chol.inverse(),
            xi_logdet: chol.logdet(),
            sigma: self.sigma.clone(),
            sigma_inv: self.sigma_inv.clone(),
            online_since_refresh: 0,
        })
    }

    pub fn observe(&mut self, c: &[f64], y: &[f64]) -> Result<()> {
        let (d, p) = (self.d(), self.p());
        if c.len() != d || y.len() != p {
            return Err(ModelError::DimensionMismatch {
                op: "online_update",
                expected: (d, p),
                got: (c.len(), y.len()),
            });
        }
        let (denom, _) = rank_one_step(&mut self.m, &mut self.xi_inv, &mut self.xi, c, y)?;
        self.xi_logdet += denom.ln();
        self.online_since_refresh += 1;
        Ok(())
    }

    pub fn refine_inverse(&mut self) {
        self.xi_inv = newton_schulz_step(&self.xi, &self.xi_inv);
        self.online_since_refresh = 0;
    }

    pub fn predictive_mean(&self, c: &[f64]) -> Vec<f64> {
        predictive_mean_impl(&self.m, c)
    }
}

/// Shorthand for [`KnownNoiseBelief::batch_update`].
pub fn known_noise_update(prior: &KnownNoiseBelief, c: &Matrix, y: &Matrix) -> Result<KnownNoiseBelief> {
    prior.batch_update(c, y)
}

/// `−½ (P log|Ξ'| − tr(Σ⁻¹ M'ᵀ Ξ' M'))`, the known-noise marginal with
/// `C`-independent terms dropped.
pub fn known_noise_marginal_ll(prior: &KnownNoiseBelief, c: &Matrix, y: &Matrix) -> Result<f64> {
    let post = prior.batch_update(c, y)?;
    let p = prior.p() as f64;
    let fit = prior
        .sigma_inv
        .matmul(&post.m.t_matmul(&post.xi.matmul(&post.m)))
        .trace();
    Ok(-0.5 * (p * post.xi_logdet - fit))
}

/// Exact known-noise `log p(Y | C)`.
pub fn known_noise_marginal_ll_full(prior: &KnownNoiseBelief, c: &Matrix, y: &Matrix) -> Result<f64> {
    check_data("known_noise_marginal_ll_full", prior.d(), prior.p(), c, y)?;
    let n = c.rows() as f64;
    let post = prior.batch_update(c, y)?;
    let p = prior.p() as f64;
    let sigma_logdet = cholesky(&prior.sigma, &JitterPolicy::default())?.logdet();
    let scatter = y
        .t_matmul(y)
        .add(&prior.m.t_matmul(&prior.xi.matmul(&prior.m)))
        .sub(&post.m.t_matmul(&post.xi.matmul(&post.m)));
    let quad = prior.sigma_inv.matmul(&scatter).trace();
    Ok(-0.5 * n * p * (2.0 * PI).ln() - 0.5 * p * (post.xi_logdet - prior.xi_logdet)
        - 0.5 * n * sigma_logdet
        - 0.5 * quad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_prior() -> NWBelief {
        make_prior(1, 1, 0.0, 1.0, 1.0, 2.0).unwrap()
    }

    #[test]
    fn prior_examples() {
        let t = make_prior(16, 39, 0.0, 1.0, 1.0, 40.0).unwrap();
        assert_eq!(t.m().shape(), (16, 39));
        let r = make_prior(256, 1, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert!((r.implied_noise().unwrap().item() - 0.5).abs() < 1e-15);
        assert_eq!(
            make_prior(3, 4, 0.0, 1.0, 1.0, 3.0).unwrap_err(),
            ModelError::InvalidDof { nu: 3.0, p: 4 }
        );
        assert!(make_prior(3, 1, 0.0, 0.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn scalar_batch_update_by_hand() {
        let post = scalar_prior()
            .batch_update(&Matrix::scalar(1.0), &Matrix::scalar(2.0))
            .unwrap();
        assert!((post.m().item() - 1.0).abs() < 1e-15);
        assert!((post.xi().item() - 2.0).abs() < 1e-15);
        assert!((post.omega().item() - 3.0).abs() < 1e-15);
        assert_eq!(post.nu(), 3.0);
    }

    #[test]
    fn empty_batch_is_identity() {
        let prior = make_prior(3, 2, 0.5, 2.0, 1.5, 4.0).unwrap();
        let post = prior.batch_update(&Matrix::zeros(0, 3), &Matrix::zeros(0, 2)).unwrap();
        assert_eq!(post, prior);
        assert_eq!(marginal_ll_full(&prior, &Matrix::zeros(0, 3), &Matrix::zeros(0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn nu_counts_rows() {
        let prior = make_prior(2, 2, 0.0, 1.0, 1.0, 40.0).unwrap();
        let c = Matrix::from_vec(7, 2, (0..14).map(|i| i as f64 * 0.1).collect());
        let y = Matrix::from_vec(7, 2, (0..14).map(|i| (i as f64).sin()).collect());
        assert_eq!(prior.batch_update(&c, &y).unwrap().nu(), 47.0);
    }

    #[test]
    fn zero_feature_row() {
        let prior = make_prior(3, 2, 0.3, 1.0, 1.0, 3.0).unwrap();
        let post = prior.online_update(&[0.0; 3], &[1.0, -2.0]).unwrap();
        assert_eq!(post.m(), prior.m());
        assert_eq!(post.xi(), prior.xi());
        assert_eq!(post.xi_inv(), prior.xi_inv());
        // innovation e = y − 0 = y, denominator 1
        let expected = prior
            .omega()
            .add(&Matrix::from_rows(&[&[1.0, -2.0], &[-2.0, 4.0]]));
        assert!(post.omega().max_abs_diff(&expected) < 1e-14);
        assert_eq!(post.nu(), 4.0);
    }

    #[test]
    fn online_dimension_errors() {
        let prior = make_prior(3, 2, 0.0, 1.0, 1.0, 3.0).unwrap();
        assert!(matches!(
            prior.online_update(&[1.0, 2.0], &[0.0, 0.0]),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_denominator_detected() {
        // An indefinite "inverse" makes 1 + c Ξ⁻¹ cᵀ non-positive.
        let mut b = make_prior(1, 1, 0.0, 1.0, 1.0, 2.0).unwrap();
        b.xi_inv = Matrix::scalar(-2.0);
        assert!(matches!(
            b.online_update(&[1.0], &[0.0]),
            Err(ModelError::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn known_noise_examples() {
        let prior = KnownNoiseBelief::new(Matrix::scalar(0.0), Matrix::scalar(1.0), Matrix::scalar(1.0)).unwrap();
        let post = known_noise_update(&prior, &Matrix::scalar(1.0), &Matrix::scalar(2.0)).unwrap();
        assert!((post.m().item() - 1.0).abs() < 1e-15);
        assert!((post.xi().item() - 2.0).abs() < 1e-15);
        let nw = make_prior(4, 3, 0.0, 1.0, 1.0, 40.0).unwrap();
        let kn = KnownNoiseBelief::from_nw(&nw).unwrap();
        assert!(kn.sigma().max_abs_diff(&Matrix::scaled_identity(3, 0.025)) < 1e-15);
        let empty = known_noise_update(&kn, &Matrix::zeros(0, 4), &Matrix::zeros(0, 3)).unwrap();
        assert_eq!(empty, kn);
    }

    #[test]
    fn known_noise_prior_only_value() {
        let prior = KnownNoiseBelief::new(
            Matrix::zeros(3, 2),
            Matrix::scaled_identity(3, 2.0),
            Matrix::identity(2),
        )
        .unwrap();
        let v = known_noise_marginal_ll(&prior, &Matrix::zeros(0, 3), &Matrix::zeros(0, 2)).unwrap();
        assert!((v + 0.5 * 2.0 * 3.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn reduced_prior_only_value() {
        let prior = make_prior(3, 2, 0.0, 2.0, 3.0, 5.0).unwrap();
        let v = marginal_ll_reduced(&prior, &Matrix::zeros(0, 3), &Matrix::zeros(0, 2)).unwrap();
        let expected = -0.5 * (2.0 * 3.0 * 2f64.ln() + 5.0 * 2.0 * 1.5f64.ln());
        assert!((v - expected).abs() < 1e-13);
    }

    #[test]
    fn predictive_mean_examples() {
        let prior = make_prior(3, 2, 0.0, 1.0, 1.0, 3.0).unwrap();
        assert_eq!(prior.predictive_mean(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let b = NWBelief::new(m, Matrix::identity(3), Matrix::identity(2), 3.0).unwrap();
        assert_eq!(b.predictive_mean(&[0.0, 1.0, 0.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn kl_of_identical_beliefs_is_zero() {
        let b = make_prior(4, 2, 0.1, 1.5, 2.0, 5.0).unwrap();
        assert!(nw_kl(&b, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_positive_after_data() {
        let p = make_prior(3, 2, 0.0, 1.0, 1.0, 4.0).unwrap();
        let c = Matrix::from_vec(5, 3, (0..15).map(|i| ((i * 5) % 7) as f64 / 3.0).collect());
        let y = Matrix::from_vec(5, 2, (0..10).map(|i| (i as f64).cos()).collect());
        let q = p.batch_update(&c, &y).unwrap();
        assert!(nw_kl(&q, &p).unwrap() > 0.1);
    }

    #[test]
    fn newton_schulz_refines() {
        let mut b = make_prior(4, 1, 0.0, 1.0, 1.0, 2.0).unwrap();
        for i in 0..30 {
            let c: Vec<f64> = (0..4).map(|j| ((i * 4 + j) as f64).sin()).collect();
            b.observe(&c, &[1.0]).unwrap();
        }
        let mut noisy = b.clone();
        noisy.xi_inv.as_mut_slice()[0] += 1e-6;
        noisy.xi_inv.symmetrize();
        let resid = |x: &NWBelief| x.xi().matmul(x.xi_inv()).sub(&Matrix::identity(4)).max_abs();
        let before = resid(&noisy);
        noisy.refine_inverse();
        assert!(resid(&noisy) < before * 1e-3);
        assert_eq!(noisy.online_since_refresh(), 0);
    }
}

//! Per-cluster patch priors and the closed-form patch updates they induce.
//!
//! Both priors reduce to a Gaussian once the scale `v` is fixed: the Gaussian
//! prior is `N(μ, C)` (with `v = 1`), the scale mixture `z = √v·u` is
//! `N(√v·μ_u, v·Σ)` given `v`. [`PatchPrior`] holds the eigendecomposition of
//! the shared covariance so every member of a cluster is updated without
//! refactoring it.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{self, Quartic, SymMatrix};

pub const DEFAULT_GSM_ALPHA: f64 = 0.5;

/// Default lower bound on the scale `v`.
///
/// The joint MAP over `(z, v)` is unbounded below as `z → 0` and `v → 0`,
/// so near-zero patches (black background, exact data) otherwise shrink
/// each other until `v` underflows. At `1e-6` the prior standard deviation
/// is still far below one grey level on any ridged covariance.
pub const DEFAULT_MIN_SCALE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Ridge added to cluster covariances: `1e-3 · max(trace/n, σ², 1)`.
///
/// Forty samples cannot span a 64-dimensional space, so the sample
/// covariance is always singular without it. The unit floor keeps the
/// ridge positive on perfectly flat clusters of noiseless data.
pub fn covariance_ridge(cov: &SymMatrix, noise_var: f64) -> f64 {
    1e-3 * (cov.trace() / cov.dim() as f64).max(noise_var).max(1.0)
}

/// Gaussian patch prior `N(mu, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: DVector<f64>,
    pub cov: SymMatrix,
}

/// Maximum-likelihood mean and covariance of a cluster, plus the ridge of
/// [`covariance_ridge`].
pub fn gaussian_estimate(samples: &[&[f64]], noise_var: f64) -> Result<GaussianParams> {
    let (mu, cov) = numerics::sample_stats(samples)?;
    let eps = covariance_ridge(&cov, noise_var);
    let cov = numerics::regularize_spd(&cov, eps)?;
    Ok(GaussianParams { mu, cov })
}

/// How the scale is read off the positive quartic root `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleFromRoot {
    /// `v = w²`, the inverse of the substitution `v = w²` that produced the quartic.
    #[default]
    Square,
    /// `v = √w`, the literal recipe that reduces to `√(d/c)` for large `c, d`.
    SqrtOfRoot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsmConfig {
    /// Shape of the Gamma prior on the scale.
    pub alpha: f64,
    pub scale_from_root: ScaleFromRoot,
    /// Scale estimates are restricted to `v ≥ min_scale`.
    pub min_scale: f64,
}

impl Default for GsmConfig {
    fn default() -> Self {
        GsmConfig {
            alpha: DEFAULT_GSM_ALPHA,
            scale_from_root: ScaleFromRoot::Square,
            min_scale: DEFAULT_MIN_SCALE,
        }
    }
}

/// Gaussian scale mixture `z = √v·u`, `u ~ N(mu_u, sigma)`, `v ~ Gamma(alpha, beta)`
/// with density `β^α v^(α−1) e^(−βv) / Γ(α)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GsmParams {
    pub sigma: SymMatrix,
    pub mu_u: DVector<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Gamma rate `β = √α·Γ(α)/Γ(α+½)`, the value for which the covariance of
/// `z` equals `(α/β)·Σ`.
pub fn gamma_rate_for_shape(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("GSM alpha must be > 0, got {alpha}")));
    }
    let log_ratio = numerics::log_gamma(alpha)? - numerics::log_gamma(alpha + 0.5)?;
    Ok(alpha.sqrt() * log_ratio.exp())
}

/// Maps the cluster moments of `z` to GSM parameters: `Σ = (β/α)·C` and
/// `μ_u = μ_z·√(β/α)` (from `μ_z = E(√v)·μ_u` with `E²(√v) = α/β`).
pub fn gsm_map_params(cov: &SymMatrix, mu_z: &DVector<f64>, alpha: f64) -> Result<GsmParams> {
    let beta = gamma_rate_for_shape(alpha)?;
    let ratio = beta / alpha;
    Ok(GsmParams {
        sigma: cov.scaled(ratio),
        mu_u: mu_z * ratio.sqrt(),
        alpha,
        beta,
    })
}

/// Negative log posterior of the scale up to a constant:
/// `β v + (1 − α + n/2) log v + d/(2v) − c/√v`.
pub fn scale_objective(alpha: f64, beta: f64, n: usize, c: f64, d: f64, v: f64) -> f64 {
    beta * v + (1.0 - alpha + 0.5 * n as f64) * v.ln() + d / (2.0 * v) - c / v.sqrt()
}

/// MAP scale for a fixed patch given `d = zᵀΣ⁻¹z` and `c = zᵀΣ⁻¹μ_u`.
///
/// Stationary points are `v = w²` for the positive roots `w` of
/// `β w⁴ + (1 − α + n/2) w² + (c/2) w − d/2`; the one with the lowest
/// [`scale_objective`] wins. Returns 1 when `d ≤ 0` (the zero patch).
pub fn scale_from_moments(
    alpha: f64,
    beta: f64,
    n: usize,
    c: f64,
    d: f64,
    mode: ScaleFromRoot,
) -> f64 {
    scale_from_moments_bounded(alpha, beta, n, c, d, mode, 0.0)
}

/// [`scale_from_moments`] minimized over `v ≥ min_scale` only: stationary
/// points below the bound are dropped and the bound itself is a candidate.
pub fn scale_from_moments_bounded(
    alpha: f64,
    beta: f64,
    n: usize,
    c: f64,
    d: f64,
    mode: ScaleFromRoot,
    min_scale: f64,
) -> f64 {
    if !(d > 0.0) || !c.is_finite() || !d.is_finite() {
        return 1.0f64.max(min_scale);
    }
    let quartic = Quartic {
        a4: beta,
        a2: 1.0 - alpha + 0.5 * n as f64,
        a1: 0.5 * c,
        a0: -0.5 * d,
    };
    let objective = |v: f64| scale_objective(alpha, beta, n, c, d, v);
    match mode {
        ScaleFromRoot::Square => {
            let mut candidates: Vec<f64> = quartic
                .positive_roots()
                .into_iter()
                .map(|w| w * w)
                .filter(|&v| v >= min_scale)
                .collect();
            if min_scale > 0.0 {
                candidates.push(min_scale);
            }
            candidates
                .into_iter()
                .map(|v| (v, objective(v)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(1.0f64.max(min_scale), |(v, _)| v)
        }
        ScaleFromRoot::SqrtOfRoot => quartic
            .positive_roots()
            .into_iter()
            .map(|w| (w, objective(w * w)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map_or(1.0, |(w, _)| w.sqrt())
            .max(min_scale),
    }
}

pub fn gsm_estimate_v(params: &GsmParams, z: &[f64], mode: ScaleFromRoot) -> Result<f64> {
    let prior = PatchPrior::from_gsm(params)?;
    let (d, c) = prior.scale_moments(z);
    Ok(scale_from_moments(
        params.alpha,
        params.beta,
        z.len(),
        c,
        d,
        mode,
    ))
}

/// A cluster prior prepared for repeated patch updates.
#[derive(Debug, Clone)]
pub struct PatchPrior {
    mean: DVector<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    precision: DMatrix<f64>,
    precision_mean: DVector<f64>,
    log_det: f64,
    gamma: Option<(f64, f64)>,
}

impl PatchPrior {
    fn prepare(cov: &SymMatrix, mean: &DVector<f64>, gamma: Option<(f64, f64)>) -> Result<Self> {
        if cov.dim() != mean.len() {
            return Err(Error::InvalidArgument(format!(
                "covariance is {0}x{0} but mean has length {1}",
                cov.dim(),
                mean.len()
            )));
        }
        let eig = cov.eigen();
        let min = eig.eigenvalues.min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let inv = eig.eigenvalues.map(|s| 1.0 / s);
        let precision = SymMatrix::symmetrized(
            &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose(),
        )
        .into_matrix();
        let precision_mean = &precision * mean;
        Ok(PatchPrior {
            mean: mean.clone(),
            log_det: eig.eigenvalues.iter().map(|s| s.ln()).sum(),
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
            precision,
            precision_mean,
            gamma,
        })
    }

    pub fn from_gaussian(params: &GaussianParams) -> Result<Self> {
        PatchPrior::prepare(&params.cov, &params.mu, None)
    }

    pub fn from_gsm(params: &GsmParams) -> Result<Self> {
        PatchPrior::prepare(&params.sigma, &params.mu_u, Some((params.alpha, params.beta)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_scale_mixture(&self) -> bool {
        self.gamma.is_some()
    }

    /// Gamma shape and rate of the scale prior, if any.
    pub fn gamma_params(&self) -> Option<(f64, f64)> {
        self.gamma
    }

    /// `(d, c) = (zᵀΣ⁻¹z, zᵀΣ⁻¹μ)`.
    pub fn scale_moments(&self, z: &[f64]) -> (f64, f64) {
        let zv = DVector::from_column_slice(z);
        let pz = &self.precision * &zv;
        (zv.dot(&pz), pz.dot(&self.mean))
    }

    /// Minimizer over `z` of
    /// `−log N(z; √v·μ, v·Σ) + λ/2‖rx − z‖² + ‖y − z‖²/(2σ²)`.
    pub fn update_z_denoise(
        &self,
        v: f64,
        rx: &[f64],
        y: &[f64],
        lambda: f64,
        sigma2: f64,
        out: &mut [f64],
    ) {
        let tau = lambda + 1.0 / sigma2;
        let n = self.dim();
        let mut b = &self.precision_mean * v.sqrt().recip();
        for k in 0..n {
            b[k] += lambda * rx[k] + y[k] / sigma2;
        }
        self.solve_shifted(v, tau, &b, out);
    }

    /// Minimizer over `z` of
    /// `−log N(z; √v·μ, v·Σ) + λ/2‖rx − z‖² + ρ/2‖H z − q‖²` with `H = diag(observed)`.
    #[allow(clippy::too_many_arguments)]
    pub fn update_z(
        &self,
        v: f64,
        rx: &[f64],
        q: &[f64],
        observed: &[bool],
        lambda: f64,
        rho: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.dim();
        let mut b = &self.precision_mean * v.sqrt().recip();
        for k in 0..n {
            b[k] += lambda * rx[k];
            if observed[k] {
                b[k] += rho * q[k];
            }
        }
        if observed.iter().all(|&o| o) {
            self.solve_shifted(v, lambda + rho, &b, out);
            return Ok(());
        }
        let mut a = &self.precision / v;
        for k in 0..n {
            a[(k, k)] += lambda + if observed[k] { rho } else { 0.0 };
        }
        let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite { min_eigenvalue: f64::NAN })?;
        let z = chol.solve(&b);
        out.copy_from_slice(z.as_slice());
        Ok(())
    }

    /// `out = (Σ⁻¹/v + τ I)⁻¹ b` through the eigenbasis of `Σ`.
    fn solve_shifted(&self, v: f64, tau: f64, b: &DVector<f64>, out: &mut [f64]) {
        let mut coeffs = self.eigvecs.tr_mul(b);
        for (c, s) in coeffs.iter_mut().zip(self.eigvals.iter()) {
            *c /= 1.0 / (v * s) + tau;
        }
        let z = &self.eigvecs * coeffs;
        out.copy_from_slice(z.as_slice());
    }

    /// `−log p(z | v)` for the conditional Gaussian `N(√v·μ, v·Σ)`, plus
    /// `−log p(v)` under the Gamma prior for a scale mixture. For the plain
    /// Gaussian prior `v` must be 1.
    pub fn energy(&self, z: &[f64], v: f64) -> f64 {
        let n = self.dim() as f64;
        let sv = v.sqrt();
        let r = DVector::from_fn(self.dim(), |k, _| z[k] - sv * self.mean[k]);
        let quad = r.dot(&(&self.precision * &r)) / v;
        let mut e = 0.5 * quad + 0.5 * (n * v.ln() + self.log_det + n * LN_2PI);
        if let Some((alpha, beta)) = self.gamma {
            let log_norm = alpha * beta.ln() - statrs::function::gamma::ln_gamma(alpha);
            e += -log_norm - (alpha - 1.0) * v.ln() + beta * v;
        }
        e
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

/// `z = (C⁻¹ + λI + ρHᵀH)⁻¹(C⁻¹μ + λ·rx + ρHᵀq)`.
pub fn gaussian_update_z(
    params: &GaussianParams,
    rx: &[f64],
    q: &[f64],
    observed: &[bool],
    lambda: f64,
    rho: f64,
) -> Result<Vec<f64>> {
    check_lengths(params.mu.len(), &[rx.len(), q.len(), observed.len()])?;
    let prior = PatchPrior::from_gaussian(params)?;
    let mut out = vec![0.0; rx.len()];
    prior.update_z(1.0, rx, q, observed, lambda, rho, &mut out)?;
    Ok(out)
}

/// `z = (C⁻¹ + (λ + 1/σ²)I)⁻¹(C⁻¹μ + λ·rx + y/σ²)`.
pub fn gaussian_update_z_denoising(
    params: &GaussianParams,
    rx: &[f64],
    y: &[f64],
    lambda: f64,
    sigma2: f64,
) -> Result<Vec<f64>> {
    check_lengths(params.mu.len(), &[rx.len(), y.len()])?;
    check_noise_var(sigma2)?;
    let prior = PatchPrior::from_gaussian(params)?;
    let mut out = vec![0.0; rx.len()];
    prior.update_z_denoise(1.0, rx, y, lambda, sigma2, &mut out);
    Ok(out)
}

/// `z = (v⁻¹Σ⁻¹ + λI + ρHᵀH)⁻¹(v^(−1/2)Σ⁻¹μ_u + λ·rx + ρHᵀq)`.
#[allow(clippy::too_many_arguments)]
pub fn gsm_update_z(
    params: &GsmParams,
    v: f64,
    rx: &[f64],
    q: &[f64],
    observed: &[bool],
    lambda: f64,
    rho: f64,
) -> Result<Vec<f64>> {
    check_lengths(params.mu_u.len(), &[rx.len(), q.len(), observed.len()])?;
    check_scale(v)?;
    let prior = PatchPrior::from_gsm(params)?;
    let mut out = vec![0.0; rx.len()];
    prior.update_z(v, rx, q, observed, lambda, rho, &mut out)?;
    Ok(out)
}

/// Denoising form of [`gsm_update_z`] with the `y` fidelity folded in.
pub fn gsm_update_z_denoising(
    params: &GsmParams,
    v: f64,
    rx: &[f64],
    y: &[f64],
    lambda: f64,
    sigma2: f64,
) -> Result<Vec<f64>> {
    check_lengths(params.mu_u.len(), &[rx.len(), y.len()])?;
    check_scale(v)?;
    check_noise_var(sigma2)?;
    let prior = PatchPrior::from_gsm(params)?;
    let mut out = vec![0.0; rx.len()];
    prior.update_z_denoise(v, rx, y, lambda, sigma2, &mut out);
    Ok(out)
}

fn check_lengths(n: usize, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != n) {
        return Err(Error::InvalidArgument(format!(
            "patch vectors must have length {n}, got {lens:?}"
        )));
    }
    Ok(())
}

fn check_scale(v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidArgument(format!("scale v must be > 0, got {v}")));
    }
    Ok(())
}

fn check_noise_var(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "denoising needs a positive noise variance, got {sigma2}"
        )));
    }
    Ok(())
}

//! Closed-form marginal likelihoods of a single tree given its partial
//! residual, and the conjugate draws for leaf values and the noise variance.
//!
//! Everything is on the log scale. The hard likelihood works from per-leaf
//! counts and sums; the soft likelihood works from leaf-probability rows
//! `phi_i` and reduces to the hard one when every row is one-hot.

use std::f64::consts::PI;

use log::warn;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::tree::LeafProbMatrix;

const JITTER: f64 = 1e-10;

/// Conjugate prior on the noise variance: `sigma^2 ~ nu * lambda / chi^2_nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPrior {
    nu: f64,
    lambda: f64,
}

impl SigmaPrior {
    pub fn new(nu: f64, lambda: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma prior needs nu > 0 and lambda > 0 (got nu = {nu}, lambda = {lambda})"
            )));
        }
        Ok(SigmaPrior { nu, lambda })
    }

    /// Chooses `lambda` so that `P(sigma < sigma_hat) = quantile` a priori.
    pub fn calibrated(nu: f64, sigma_hat: f64, quantile: f64) -> Result<Self> {
        use statrs::distribution::{ChiSquared as ChiSq, ContinuousCDF};
        if !(0.0 < quantile && quantile < 1.0) {
            return Err(Error::invalid(format!("quantile {quantile} not in (0, 1)")));
        }
        if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
            return Err(Error::invalid(format!("sigma_hat {sigma_hat} must be > 0")));
        }
        let chi = ChiSq::new(nu).map_err(|e| Error::invalid(format!("nu = {nu}: {e}")))?;
        // P(nu lambda / X < s^2) = P(X > nu lambda / s^2) = quantile
        let q = chi.inverse_cdf(1.0 - quantile);
        Self::new(nu, sigma_hat * sigma_hat * q / nu)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Normal prior `N(0, sigma_mu2)` on every leaf value (the response is
/// centered, so the prior mean is fixed at zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPrior {
    sigma_mu2: f64,
}

impl LeafPrior {
    pub fn new(sigma_mu2: f64) -> Result<Self> {
        if !(sigma_mu2 > 0.0 && sigma_mu2.is_finite()) {
            return Err(Error::invalid(format!("leaf prior variance {sigma_mu2} must be > 0")));
        }
        Ok(LeafPrior { sigma_mu2 })
    }

    /// `sigma_mu = 0.5 / (k sqrt(m))` for a response scaled to `[-0.5, 0.5]`.
    pub fn scaled_default(trees: usize, k: f64) -> Result<Self> {
        if trees == 0 || !(k > 0.0) {
            return Err(Error::invalid("leaf prior needs trees >= 1 and k > 0"));
        }
        let sd = 0.5 / (k * (trees as f64).sqrt());
        Self::new(sd * sd)
    }

    pub fn mu_mu(&self) -> f64 {
        0.0
    }

    pub fn sigma_mu2(&self) -> f64 {
        self.sigma_mu2
    }
}

/// Per-leaf counts and residual sums for a hard tree.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafSuffStats {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
    pub n: usize,
    /// `y^T y` over all rows.
    pub sum_sq: f64,
}

impl LeafSuffStats {
    pub fn new(counts: Vec<usize>, sums: Vec<f64>, sum_sq: f64) -> Result<Self> {
        if counts.len() != sums.len() || counts.is_empty() {
            return Err(Error::invalid("counts and sums must be non-empty and equally long"));
        }
        let n = counts.iter().sum();
        Ok(LeafSuffStats {
            counts,
            sums,
            n,
            sum_sq,
        })
    }

    pub fn from_assignments(leaf_of: &[usize], residuals: &[f64], n_leaves: usize) -> Result<Self> {
        if leaf_of.len() != residuals.len() {
            return Err(Error::invalid("one leaf assignment per residual is required"));
        }
        let mut counts = vec![0usize; n_leaves];
        let mut sums = vec![0.0; n_leaves];
        let mut sum_sq = 0.0;
        for (&b, &r) in leaf_of.iter().zip(residuals) {
            if b >= n_leaves {
                return Err(Error::invalid(format!("leaf index {b} out of range")));
            }
            counts[b] += 1;
            sums[b] += r;
            sum_sq += r * r;
        }
        Self::new(counts, sums, sum_sq)
    }

    pub fn n_leaves(&self) -> usize {
        self.counts.len()
    }
}

fn check_variances(sigma2: f64, sigma_mu2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) || !(sigma_mu2 > 0.0 && sigma_mu2.is_finite()) {
        return Err(Error::invalid(format!(
            "variances must be positive and finite (sigma2 = {sigma2}, sigma_mu2 = {sigma_mu2})"
        )));
    }
    Ok(())
}

/// Data term shared by every tree structure on the same rows:
/// `-(n/2) log(2 pi sigma2) - y^T y / (2 sigma2)`.
#[inline]
pub(crate) fn base_log_term(n: usize, sum_sq: f64, sigma2: f64) -> f64 {
    -0.5 * n as f64 * (2.0 * PI * sigma2).ln() - 0.5 * sum_sq / sigma2
}

/// Per-leaf contribution (before the factor 1/2).
#[inline]
pub(crate) fn leaf_log_term(n_b: usize, s_b: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let denom = sigma2 + sigma_mu2 * n_b as f64;
    (sigma2 / denom).ln() + sigma_mu2 * s_b * s_b / (sigma2 * denom)
}

/// Log marginal likelihood of a hard tree with leaf values integrated out.
pub fn hard_log_marginal(stats: &LeafSuffStats, sigma2: f64, sigma_mu2: f64) -> Result<f64> {
    check_variances(sigma2, sigma_mu2)?;
    let leaves: f64 = stats
        .counts
        .iter()
        .zip(&stats.sums)
        .map(|(&n_b, &s_b)| leaf_log_term(n_b, s_b, sigma2, sigma_mu2))
        .sum();
    Ok(base_log_term(stats.n, stats.sum_sq, sigma2) + 0.5 * leaves)
}

/// Accumulates `sum phi_i phi_i^T`, `sum r_i phi_i` and `sum r_i^2` row by
/// row, skipping zero leaf probabilities.
#[derive(Debug, Clone)]
pub(crate) struct SoftStatsBuilder {
    n_leaves: usize,
    n: usize,
    gram: Vec<f64>,
    cross: Vec<f64>,
    sum_sq: f64,
    nz: Vec<usize>,
}

impl SoftStatsBuilder {
    pub(crate) fn new(n_leaves: usize) -> Self {
        SoftStatsBuilder {
            n_leaves,
            n: 0,
            gram: vec![0.0; n_leaves * n_leaves],
            cross: vec![0.0; n_leaves],
            sum_sq: 0.0,
            nz: Vec::with_capacity(n_leaves),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, phi: &[f64], r: f64) {
        let b = self.n_leaves;
        self.nz.clear();
        self.nz.extend((0..b).filter(|&k| phi[k] != 0.0));
        for (a, &i) in self.nz.iter().enumerate() {
            let pi = phi[i];
            self.cross[i] += r * pi;
            let row = &mut self.gram[i * b..(i + 1) * b];
            for &j in &self.nz[a..] {
                row[j] += pi * phi[j];
            }
        }
        self.sum_sq += r * r;
        self.n += 1;
    }

    pub(crate) fn finish(mut self, sigma2: f64) -> SoftSuffStats {
        let b = self.n_leaves;
        // entries were accumulated for i <= j only (leaf-index order of nz)
        for i in 0..b {
            for j in i + 1..b {
                let v = self.gram[i * b + j];
                self.gram[j * b + i] = v;
            }
        }
        for v in &mut self.gram {
            *v /= sigma2;
        }
        for v in &mut self.cross {
            *v /= sigma2;
        }
        SoftSuffStats {
            n_leaves: b,
            n: self.n,
            lambda: self.gram,
            weighted: self.cross,
            sum_sq: self.sum_sq,
            sigma2,
        }
    }
}

/// Sufficient statistics of a soft tree: `Lambda = sum phi_i phi_i^T / sigma2`
/// and `sum R_i phi_i / sigma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSuffStats {
    pub n_leaves: usize,
    pub n: usize,
    pub lambda: Vec<f64>,
    pub weighted: Vec<f64>,
    pub sum_sq: f64,
    pub sigma2: f64,
}

impl SoftSuffStats {
    pub fn compute(phi: &LeafProbMatrix, residuals: &[f64], sigma2: f64) -> Result<Self> {
        if phi.n_rows() != residuals.len() {
            return Err(Error::invalid(format!(
                "phi has {} rows but there are {} residuals",
                phi.n_rows(),
                residuals.len()
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 = {sigma2} must be > 0")));
        }
        let mut builder = SoftStatsBuilder::new(phi.n_leaves());
        for (row, &r) in phi.rows().zip(residuals) {
            builder.push(row, r);
        }
        Ok(builder.finish(sigma2))
    }

    /// Cholesky factor of the posterior precision `I / sigma_mu2 + Lambda`.
    fn precision_factor(&self, sigma_mu2: f64) -> Result<Cholesky> {
        let b = self.n_leaves;
        let mut p = self.lambda.clone();
        for i in 0..b {
            p[i * b + i] += 1.0 / sigma_mu2;
        }
        match Cholesky::factor(&p, b) {
            Ok(c) => Ok(c),
            Err(first) => {
                warn!("soft posterior precision ({b} leaves) not positive definite ({first}); retrying with jitter");
                for i in 0..b {
                    p[i * b + i] += JITTER;
                }
                Cholesky::factor(&p, b).map_err(|e| {
                    Error::Numerical(format!("soft posterior precision with {b} leaves: {e}"))
                })
            }
        }
    }

    fn evaluate(&self, sigma_mu2: f64) -> Result<(Cholesky, Vec<f64>, f64)> {
        check_variances(self.sigma2, sigma_mu2)?;
        if self.n_leaves == 0 {
            return Err(Error::invalid("soft likelihood needs at least one leaf"));
        }
        let chol = self.precision_factor(sigma_mu2)?;
        let mu_hat = chol.solve(&self.weighted);
        let quad: f64 = mu_hat.iter().zip(&self.weighted).map(|(a, b)| a * b).sum();
        let value = -0.5 * chol.log_det() + base_log_term(self.n, self.sum_sq, self.sigma2)
            - 0.5 * self.n_leaves as f64 * sigma_mu2.ln()
            + 0.5 * quad;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "soft log marginal is not finite ({} leaves, {} rows)",
                self.n_leaves, self.n
            )));
        }
        Ok((chol, mu_hat, value))
    }

    /// Log marginal likelihood only (no posterior covariance).
    pub fn log_marginal(&self, sigma_mu2: f64) -> Result<f64> {
        self.evaluate(sigma_mu2).map(|(_, _, v)| v)
    }

    pub fn posterior(&self, sigma_mu2: f64) -> Result<SoftPosterior> {
        let (chol, mu_hat, log_marginal) = self.evaluate(sigma_mu2)?;
        Ok(SoftPosterior {
            n_leaves: self.n_leaves,
            omega: chol.inverse(),
            mu_hat,
            log_marginal,
        })
    }
}

/// Gaussian posterior of the leaf values of a soft tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPosterior {
    pub n_leaves: usize,
    /// Posterior covariance `(I / sigma_mu2 + Lambda)^{-1}`, row-major.
    pub omega: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub log_marginal: f64,
}

/// Soft-tree marginal likelihood and leaf posterior.
pub fn soft_log_marginal(
    phi: &LeafProbMatrix,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
) -> Result<SoftPosterior> {
    check_variances(sigma2, sigma_mu2)?;
    SoftSuffStats::compute(phi, residuals, sigma2)?.posterior(sigma_mu2)
}

/// Independent conjugate normal draws, one per leaf.
pub fn draw_hard_leaf_values<R: Rng + ?Sized>(
    stats: &LeafSuffStats,
    sigma2: f64,
    sigma_mu2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_variances(sigma2, sigma_mu2)?;
    Ok(stats
        .counts
        .iter()
        .zip(&stats.sums)
        .map(|(&n_b, &s_b)| {
            let precision = n_b as f64 / sigma2 + 1.0 / sigma_mu2;
            let mean = s_b / sigma2 / precision;
            let z: f64 = StandardNormal.sample(rng);
            mean + z / precision.sqrt()
        })
        .collect())
}

/// One draw from `N(mu_hat, Omega)`.
pub fn draw_soft_leaf_values<R: Rng + ?Sized>(post: &SoftPosterior, rng: &mut R) -> Result<Vec<f64>> {
    let b = post.n_leaves;
    let chol = Cholesky::factor(&post.omega, b)
        .map_err(|e| Error::Numerical(format!("posterior covariance with {b} leaves: {e}")))?;
    let z: Vec<f64> = (0..b).map(|_| StandardNormal.sample(rng)).collect();
    Ok(chol
        .lower_mul(&z)
        .into_iter()
        .zip(&post.mu_hat)
        .map(|(a, m)| a + m)
        .collect())
}

/// `sigma^2 ~ (nu lambda + sum e_i^2) / chi^2_{nu + n}`.
pub fn draw_sigma2<R: Rng + ?Sized>(residuals: &[f64], prior: &SigmaPrior, rng: &mut R) -> f64 {
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let dof = prior.nu + residuals.len() as f64;
    let chi = ChiSquared::new(dof).expect("validated prior has nu > 0");
    let scale = prior.nu * prior.lambda + sse;
    loop {
        let x: f64 = chi.sample(rng);
        if x > 0.0 {
            let s2 = scale / x;
            if s2.is_finite() {
                return s2;
            }
        }
    }
}

//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use asbart::data::{Dataset, FeatureMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `log N(y; 0, cov)` by dense Cholesky.
pub fn mvn_log_density(y: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = y.len();
    let chol = cov.clone().cholesky().expect("covariance must be positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let yv = DVector::from_column_slice(y);
    let quad = yv.dot(&chol.solve(&yv));
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// `sigma2 I + sigma_mu2 Phi Phi^T` with `phi` given row by row.
pub fn marginal_cov(phi: &[Vec<f64>], sigma2: f64, sigma_mu2: f64) -> DMatrix<f64> {
    let n = phi.len();
    let b = phi[0].len();
    let z = DMatrix::from_fn(n, b, |i, j| phi[i][j]);
    DMatrix::identity(n, n) * sigma2 + (&z * z.transpose()) * sigma_mu2
}

pub fn one_hot_rows(assign: &[usize], b: usize) -> Vec<Vec<f64>> {
    assign
        .iter()
        .map(|&a| (0..b).map(|j| if j == a { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Random rows on the probability simplex, some of them exactly one-hot.
pub fn random_simplex_rows<R: Rng>(n: usize, b: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.25) {
                let k = rng.random_range(0..b);
                return (0..b).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
            }
            let w: Vec<f64> = (0..b).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals<R: Rng>(n: usize, sd: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| sd * std_normal(rng)).collect()
}

/// Posterior `(Omega, mu_hat)` for leaf values under `N(0, sigma_mu2 I)`.
pub fn leaf_posterior(phi: &[Vec<f64>], r: &[f64], sigma2: f64, sigma_mu2: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = phi.len();
    let b = phi[0].len();
    let z = DMatrix::from_fn(n, b, |i, j| phi[i][j]);
    let prec = DMatrix::identity(b, b) / sigma_mu2 + z.transpose() * &z / sigma2;
    let omega = prec.try_inverse().expect("precision is invertible");
    let mu = &omega * (z.transpose() * DVector::from_column_slice(r)) / sigma2;
    (omega, mu)
}

/// One-feature step data: `y = 0` below `step`, `height` above, plus noise.
pub fn step_data<R: Rng>(n: usize, step: f64, height: f64, noise_sd: f64, rng: &mut R) -> Dataset {
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| if v < step { 0.0 } else { height } + noise_sd * std_normal(rng))
        .collect();
    Dataset::from_ordinal(FeatureMatrix::from_columns(vec![x]).unwrap(), y).unwrap()
}

/// Exact one-sided sign test: `P(X >= wins)` for `X ~ Binomial(trials, 1/2)`.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=trials {
        p += binom(trials, k) * 0.5f64.powi(trials as i32);
    }
    p
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

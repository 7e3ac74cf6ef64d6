//! Synthetic Friedman regression data with 20 uniform features, five of
//! which are active:
//!
//! `f(x) = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5`
//!
//! with `x ~ Uniform(-2, 2)^20`. High noise adds `N(0, Var(f))` where the
//! variance is the sample variance of the generated `f` values (signal to
//! noise ratio 1); low noise adds `N(0, 1)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};

pub const FRIEDMAN_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    High,
    Low,
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Noise::High => "high",
            Noise::Low => "low",
        })
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Noise::High),
            "low" => Ok(Noise::Low),
            other => Err(Error::invalid(format!("unknown noise setting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FriedmanSpec {
    pub n: usize,
    pub noise: Noise,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanData {
    pub data: Dataset,
    /// Noiseless `f(x)` per row.
    pub truth: Vec<f64>,
}

pub fn friedman_f(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

pub fn gen_friedman(spec: &FriedmanSpec) -> Result<FriedmanData> {
    if spec.n == 0 {
        return Err(Error::invalid("Friedman data needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| {
            (0..FRIEDMAN_FEATURES)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect()
        })
        .collect();
    let truth: Vec<f64> = rows.iter().map(|r| friedman_f(r)).collect();
    let noise_sd = match spec.noise {
        Noise::Low => 1.0,
        Noise::High => {
            let n = truth.len() as f64;
            let mean = truth.iter().sum::<f64>() / n;
            let var = if truth.len() > 1 {
                truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            var.sqrt()
        }
    };
    let y: Vec<f64> = truth
        .iter()
        .map(|f| {
            let z: f64 = StandardNormal.sample(&mut rng);
            f + noise_sd * z
        })
        .collect();
    let data = Dataset::from_ordinal(FeatureMatrix::from_rows(&rows)?, y)?;
    Ok(FriedmanData { data, truth })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "rmse needs equal lengths");
    (pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_points() {
        let mut x = vec![0.0; 20];
        assert!((friedman_f(&x) - 5.0).abs() < 1e-12);
        x[0] = 0.5;
        x[1] = 1.0;
        x[2] = 0.5;
        assert!((friedman_f(&x) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_features_do_not_matter() {
        let d = gen_friedman(&FriedmanSpec {
            n: 50,
            noise: Noise::Low,
            seed: 3,
        })
        .unwrap();
        for i in 0..50 {
            let mut row = d.data.x.row(i);
            row[5..].reverse();
            assert_eq!(friedman_f(&row), d.truth[i]);
        }
    }

    #[test]
    fn reproducible_and_truthful() {
        let spec = FriedmanSpec {
            n: 100,
            noise: Noise::High,
            seed: 11,
        };
        let a = gen_friedman(&spec).unwrap();
        let b = gen_friedman(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(rmse(&a.truth, &a.truth), 0.0);
        assert_eq!(a.data.x.n_cols(), 20);
        assert!(a.data.x.columns().iter().flatten().all(|v| (-2.0..2.0).contains(v)));
    }

    #[test]
    fn high_noise_matches_signal_variance() {
        let d = gen_friedman(&FriedmanSpec {
            n: 20_000,
            noise: Noise::High,
            seed: 5,
        })
        .unwrap();
        let noise: Vec<f64> = d.data.y.iter().zip(&d.truth).map(|(y, f)| y - f).collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let ratio = var(&noise) / var(&d.truth);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }
}

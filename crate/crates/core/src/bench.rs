//! Friedman benchmark harness: replicated train/test runs of several
//! methods, scored by RMSE against the noiseless test function.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::friedman::{gen_friedman, rmse, FriedmanSpec, Noise};
use crate::sampler::{fit, Aggregation, FitConfig};
use crate::tree::GateFamily;

/// Environment variable capping the number of concurrent replications.
pub const THREADS_ENV: &str = "ASBART_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// The sampler with the given gate and sweep count; `Hard` means grid `[0]`.
    Asbart { gate: GateFamily, sweeps: usize },
    /// Predicts the true test function (RMSE 0).
    Truth,
    /// Predicts the training-response mean.
    Mean,
}

impl Method {
    pub fn label(&self) -> String {
        match *self {
            Method::Truth => "truth".into(),
            Method::Mean => "mean".into(),
            Method::Asbart { gate, sweeps } => {
                let base = match gate {
                    GateFamily::Hard => "hard",
                    GateFamily::Linear => "soft-linear",
                    GateFamily::Sigmoid => "soft-sigmoid",
                };
                if sweeps == 40 {
                    base.to_string()
                } else {
                    format!("{base}-{sweeps}")
                }
            }
        }
    }

    /// Burn-in keeps the 15-of-40 proportion.
    pub fn burn_in(sweeps: usize) -> usize {
        sweeps * 15 / 40
    }

    pub fn fit_config(&self, trees: usize, seed: u64) -> Option<FitConfig> {
        match *self {
            Method::Asbart { gate, sweeps } => Some(FitConfig {
                trees,
                sweeps,
                burn_in: Self::burn_in(sweeps),
                gate,
                seed,
                ..FitConfig::default()
            }),
            Method::Truth | Method::Mean => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `hard`, `soft-linear`, `soft-sigmoid` with an optional
    /// `-<sweeps>` suffix (default 40), the `xs40t1`-style aliases, `truth`
    /// and `mean`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let unknown = || Error::invalid(format!("unknown method '{s}'"));
        match s.as_str() {
            "truth" => return Ok(Method::Truth),
            "mean" => return Ok(Method::Mean),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("xs") {
            let (sweeps, gate) = rest.split_once('t').ok_or_else(unknown)?;
            let gate = match gate {
                "1" => GateFamily::Linear,
                "2" => GateFamily::Sigmoid,
                _ => return Err(unknown()),
            };
            let sweeps = sweeps.parse().map_err(|_| unknown())?;
            return Ok(Method::Asbart { gate, sweeps });
        }
        let bases = [
            ("hard-mode", GateFamily::Hard),
            ("hard", GateFamily::Hard),
            ("soft-linear", GateFamily::Linear),
            ("soft-sigmoid", GateFamily::Sigmoid),
        ];
        for (base, gate) in bases {
            if let Some(rest) = s.strip_prefix(base) {
                let sweeps = match rest {
                    "" => 40,
                    r => r.strip_prefix('-').and_then(|v| v.parse().ok()).ok_or_else(unknown)?,
                };
                if sweeps < 2 {
                    return Err(Error::invalid(format!("method '{s}' needs at least 2 sweeps")));
                }
                return Ok(Method::Asbart { gate, sweeps });
            }
        }
        Err(unknown())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub noise: Noise,
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub trees: usize,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            noise: Noise::High,
            reps: 20,
            n: 1000,
            seed: 2024,
            methods: vec![
                Method::Asbart {
                    gate: GateFamily::Hard,
                    sweeps: 40,
                },
                Method::Asbart {
                    gate: GateFamily::Linear,
                    sweeps: 40,
                },
                Method::Asbart {
                    gate: GateFamily::Sigmoid,
                    sweeps: 40,
                },
            ],
            trees: 50,
            threads: None,
        }
    }
}

/// Reads [`THREADS_ENV`], ignoring unparsable or zero values.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&t: &usize| t > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub rep: usize,
    pub method: String,
    pub rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_rmse: f64,
    pub mean_seconds: f64,
    /// Mean time relative to the first method.
    pub time_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    /// Ordered by (rep, method position).
    pub records: Vec<BenchRecord>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed for `(rep, stream)` derived from the base seed.
pub fn derive_seed(seed: u64, rep: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(rep as u64)) ^ stream)
}

fn run_rep(cfg: &BenchConfig, rep: usize) -> Result<Vec<BenchRecord>> {
    let train = gen_friedman(&FriedmanSpec {
        n: cfg.n,
        noise: cfg.noise,
        seed: derive_seed(cfg.seed, rep, 1),
    })?;
    let test = gen_friedman(&FriedmanSpec {
        n: cfg.n,
        noise: cfg.noise,
        seed: derive_seed(cfg.seed, rep, 2),
    })?;
    let fit_seed = derive_seed(cfg.seed, rep, 3);
    let mut out = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        let (pred, seconds) = match method {
            Method::Truth => (test.truth.clone(), 0.0),
            Method::Mean => {
                let start = Instant::now();
                let mean = train.data.y.iter().sum::<f64>() / train.data.y.len() as f64;
                let secs = start.elapsed().as_secs_f64();
                (vec![mean; cfg.n], secs)
            }
            Method::Asbart { .. } => {
                let config = method.fit_config(cfg.trees, fit_seed).expect("sampler method");
                let start = Instant::now();
                let model = fit(&train.data, &config)?;
                let secs = start.elapsed().as_secs_f64();
                let pred = model.predict(&test.data.x, Aggregation::PosteriorMean)?.into_mean();
                (pred, secs)
            }
        };
        out.push(BenchRecord {
            rep,
            method: method.label(),
            rmse: rmse(&pred, &test.truth),
            seconds,
        });
    }
    Ok(out)
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 || cfg.n < 2 || cfg.methods.is_empty() || cfg.trees == 0 {
        return Err(Error::invalid("bench needs reps >= 1, n >= 2, trees >= 1 and at least one method"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let per_rep: Vec<Vec<BenchRecord>> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| run_rep(cfg, rep))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport {
        config: cfg.clone(),
        records: per_rep.into_iter().flatten().collect(),
    })
}

impl BenchReport {
    pub fn rmse_of(&self, method: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.method == method).map(|r| r.rmse).collect()
    }

    pub fn seconds_of(&self, method: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.method == method).map(|r| r.seconds).collect()
    }

    pub fn summary(&self) -> Vec<MethodSummary> {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let rows: Vec<(String, f64, f64)> = self
            .config
            .methods
            .iter()
            .map(|m| {
                let label = m.label();
                let r = mean(&self.rmse_of(&label));
                let s = mean(&self.seconds_of(&label));
                (label, r, s)
            })
            .collect();
        let base = rows.first().map_or(f64::NAN, |r| r.2);
        rows.into_iter()
            .map(|(method, mean_rmse, mean_seconds)| MethodSummary {
                method,
                mean_rmse,
                mean_seconds,
                time_ratio: if base > 0.0 {
                    mean_seconds / base
                } else if mean_seconds == base {
                    1.0
                } else {
                    f64::NAN
                },
            })
            .collect()
    }

    /// `rep,method,rmse,seconds` rows.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "rep,method,rmse,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{:.6}", r.rep, r.method, r.rmse, r.seconds)?;
        }
        Ok(())
    }

    pub fn summary_table(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Friedman benchmark: noise={} reps={} n={} trees={} seed={}",
            c.noise, c.reps, c.n, c.trees, c.seed
        );
        let _ = writeln!(out, "{:<18} {:>12} {:>12} {:>8}", "method", "mean RMSE", "mean time s", "ratio");
        for s in self.summary() {
            let _ = writeln!(
                out,
                "{:<18} {:>12.4} {:>12.3} {:>8.2}",
                s.method, s.mean_rmse, s.mean_seconds, s.time_ratio
            );
        }
        out
    }
}

//! Bayesian backfitting over trees and sweeps.
//!
//! For each sweep and each tree: remove the tree's fit from the residual,
//! grow a hard candidate from the root, pick its bandwidth by grid search,
//! choose between candidate and incumbent with an MH step, redraw the leaf
//! values of the chosen tree and add its fit back. The noise variance is
//! redrawn once per sweep, and post-burn-in forests are retained for
//! prediction.

pub mod bandwidth;
pub mod mh;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSchema, FeatureMatrix};
use crate::error::{Error, Result};
use crate::grow::{grow_from_root, CutpointGrid, GrowContext, GrowLimits, NodeWorkset, SplitPrior};
use crate::likelihood::{
    draw_hard_leaf_values, draw_sigma2, draw_soft_leaf_values, LeafPrior, SigmaPrior,
};
use crate::tree::{forest_predict_matrix, DecisionTree, Forest, GateFamily, Router};

pub use bandwidth::{percent_to_tau, search_bandwidth, tree_log_marginal, BandwidthGrid, BandwidthSearch};
pub use mh::{mh_accept, tree_log_prior, ScoredTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafPriorSpec {
    /// `sigma_mu = 0.5 / (k sqrt(m))` on the scaled response.
    Scaled { k: f64 },
    Fixed { sigma_mu2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaPriorSpec {
    /// `lambda` chosen so that `P(sigma < sd(y)) = quantile`.
    Calibrated { nu: f64, quantile: f64 },
    Fixed { nu: f64, lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub trees: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub gate: GateFamily,
    /// Bandwidth grid in percent of rows covered on each side.
    pub grid_percents: Vec<f64>,
    pub seed: u64,
    pub limits: GrowLimits,
    pub split_prior: SplitPrior,
    pub leaf_prior: LeafPriorSpec,
    pub sigma_prior: SigmaPriorSpec,
    pub max_cutpoints: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            trees: 50,
            sweeps: 40,
            burn_in: 15,
            gate: GateFamily::Linear,
            grid_percents: (0..=20).map(f64::from).collect(),
            seed: 0,
            limits: GrowLimits::default(),
            split_prior: SplitPrior::default(),
            leaf_prior: LeafPriorSpec::Scaled { k: 2.0 },
            sigma_prior: SigmaPriorSpec::Calibrated { nu: 3.0, quantile: 0.9 },
            max_cutpoints: 100,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::invalid("need at least one tree"));
        }
        if self.sweeps == 0 || self.burn_in >= self.sweeps {
            return Err(Error::invalid(format!(
                "burn-in ({}) must be smaller than the sweep count ({})",
                self.burn_in, self.sweeps
            )));
        }
        if self.max_cutpoints == 0 {
            return Err(Error::invalid("max_cutpoints must be >= 1"));
        }
        if self.limits.min_node_size == 0 {
            return Err(Error::invalid("min_node_size must be >= 1"));
        }
        bandwidth::validate_percents(&self.grid_percents)?;
        self.split_prior.validate()
    }

    /// The grid actually searched: hard gates never smooth.
    pub fn effective_grid(&self) -> Vec<f64> {
        if self.gate == GateFamily::Hard {
            vec![0.0]
        } else {
            self.grid_percents.clone()
        }
    }

    pub fn is_hard_mode(&self) -> bool {
        self.effective_grid() == [0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPriors {
    pub split: SplitPrior,
    pub leaf: LeafPrior,
    pub sigma: SigmaPrior,
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Noise variance after each sweep, in response units.
    pub sigma2: Vec<f64>,
    /// `max |y - sum of tree fits - residual|` after each sweep (scaled units).
    pub residual_drift: Vec<f64>,
    /// Candidate trees accepted by the MH step.
    pub accepted: Vec<usize>,
    /// Trees with a positive bandwidth at the end of the sweep.
    pub smoothed: Vec<usize>,
    pub mean_leaves: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    PosteriorMean,
    PerSweep,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    PosteriorMean(Vec<f64>),
    /// `[retained forest][row]`.
    PerSweep(Vec<Vec<f64>>),
}

impl Prediction {
    pub fn into_mean(self) -> Vec<f64> {
        match self {
            Prediction::PosteriorMean(v) => v,
            Prediction::PerSweep(m) => average_rows(&m),
        }
    }
}

fn average_rows(per_sweep: &[Vec<f64>]) -> Vec<f64> {
    let k = per_sweep.len() as f64;
    let n = per_sweep.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| per_sweep.iter().map(|s| s[i]).sum::<f64>() / k)
        .collect()
}

/// Retained posterior forests plus everything needed to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub feature_names: Vec<String>,
    pub is_dummy: Vec<bool>,
    /// Source schema, when the data came from a CSV.
    pub schema: Option<DatasetSchema>,
    pub config: FitConfig,
    pub priors: ResolvedPriors,
    /// `y_scaled = (y - y_center) / y_scale`.
    pub y_center: f64,
    pub y_scale: f64,
    /// Training quantile tables used for the bandwidth grid.
    pub bandwidth: BandwidthGrid,
    /// Forests in scaled response units.
    pub forests: Vec<Forest>,
    pub trace: FitTrace,
}

impl FittedModel {
    /// Predictions for a matrix whose columns follow `feature_names`.
    pub fn predict(&self, x: &FeatureMatrix, aggregation: Aggregation) -> Result<Prediction> {
        if x.n_cols() != self.feature_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "model expects {} features, got {}",
                self.feature_names.len(),
                x.n_cols()
            )));
        }
        if self.forests.is_empty() {
            return Err(Error::invalid("model has no retained forests"));
        }
        if let Some((i, j)) = (0..x.n_cols())
            .find_map(|j| x.col(j).iter().position(|v| !v.is_finite()).map(|i| (i, j)))
        {
            return Err(Error::invalid(format!("row {i}, feature {j} is not finite")));
        }
        let per_sweep: Vec<Vec<f64>> = self
            .forests
            .iter()
            .map(|f| {
                forest_predict_matrix(f, x)
                    .into_iter()
                    .map(|v| self.y_center + self.y_scale * v)
                    .collect()
            })
            .collect();
        Ok(match aggregation {
            Aggregation::PerSweep => Prediction::PerSweep(per_sweep),
            Aggregation::PosteriorMean => Prediction::PosteriorMean(average_rows(&per_sweep)),
        })
    }

    /// Name-checked prediction for a dataset.
    pub fn predict_dataset(&self, data: &Dataset, aggregation: Aggregation) -> Result<Prediction> {
        if data.names != self.feature_names {
            return Err(Error::SchemaMismatch(format!(
                "feature columns {:?} do not match the model's {:?}",
                data.names, self.feature_names
            )));
        }
        self.predict(&data.x, aggregation)
    }

    pub fn final_sigma2(&self) -> f64 {
        self.trace.sigma2.last().copied().unwrap_or(f64::NAN)
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

struct Scaling {
    center: f64,
    scale: f64,
}

impl Scaling {
    /// Maps `y` onto `[-0.5, 0.5]`.
    fn from_response(y: &[f64]) -> Self {
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        Scaling {
            center: 0.5 * (lo + hi),
            scale: if range > 0.0 { range } else { 1.0 },
        }
    }
}

fn resolve_priors(config: &FitConfig, y_scaled: &[f64]) -> Result<(ResolvedPriors, f64)> {
    let sd = sample_sd(y_scaled);
    let sigma_hat = if sd > 0.0 { sd } else { 1.0 };
    let leaf = match config.leaf_prior {
        LeafPriorSpec::Scaled { k } => LeafPrior::scaled_default(config.trees, k)?,
        LeafPriorSpec::Fixed { sigma_mu2 } => LeafPrior::new(sigma_mu2)?,
    };
    let sigma = match config.sigma_prior {
        SigmaPriorSpec::Calibrated { nu, quantile } => SigmaPrior::calibrated(nu, sigma_hat, quantile)?,
        SigmaPriorSpec::Fixed { nu, lambda } => SigmaPrior::new(nu, lambda)?,
    };
    Ok((
        ResolvedPriors {
            split: config.split_prior,
            leaf,
            sigma,
        },
        sigma_hat * sigma_hat,
    ))
}

/// Fitted values of one tree on every training row.
fn tree_fit(tree: &DecisionTree, x: &FeatureMatrix, out: &mut [f64]) {
    let values = tree.leaf_values();
    let mut router = Router::new(tree);
    let mut phi = vec![0.0; router.n_leaves()];
    for (i, o) in out.iter_mut().enumerate() {
        router.route(|j| x.get(i, j), &mut phi);
        *o = phi.iter().zip(&values).map(|(p, v)| p * v).sum();
    }
}

/// Redraws the leaf values of `tree` against `residuals`.
fn draw_leaves(
    tree: &mut DecisionTree,
    x: &FeatureMatrix,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let values = if tree.tau > 0.0 && tree.has_smooth_branch() {
        let post = bandwidth::soft_stats(tree, x, residuals, sigma2).posterior(sigma_mu2)?;
        draw_soft_leaf_values(&post, rng)?
    } else {
        let stats = bandwidth::hard_stats(tree, x, residuals)?;
        draw_hard_leaf_values(&stats, sigma2, sigma_mu2, rng)?
    };
    tree.set_leaf_values(&values)
}

/// Runs the full sampler on a preprocessed dataset.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FittedModel> {
    config.validate()?;
    let x = &data.x;
    let n = x.n_rows();
    if n == 0 || x.n_cols() == 0 {
        return Err(Error::invalid("dataset needs at least one row and one feature"));
    }
    if data.y.len() != n {
        return Err(Error::invalid(format!("{} responses for {n} rows", data.y.len())));
    }
    if data.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response contains non-finite values"));
    }
    if let Some(j) = (0..x.n_cols()).find(|&j| x.col(j).iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("feature '{}' contains non-finite values", data.names[j])));
    }

    let scaling = Scaling::from_response(&data.y);
    let y: Vec<f64> = data.y.iter().map(|v| (v - scaling.center) / scaling.scale).collect();
    let (priors, init_sigma2) = resolve_priors(config, &y)?;
    let sigma_mu2 = priors.leaf.sigma_mu2();
    let cut_grid = CutpointGrid::from_data(x, &data.is_dummy, config.max_cutpoints)?;
    let bw_grid = BandwidthGrid::new(config.effective_grid(), x)?;
    let root = NodeWorkset::root(x);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let m = config.trees;
    let mut trees = vec![DecisionTree::single_leaf(0.0, config.gate); m];
    let mut fits = vec![vec![0.0; n]; m];
    let mut resid = y.clone();
    let mut sigma2 = init_sigma2;
    let mut trace = FitTrace::default();
    let mut forests = Vec::with_capacity(config.sweeps - config.burn_in);
    let unscale2 = scaling.scale * scaling.scale;

    for sweep in 0..config.sweeps {
        let mut accepted = 0;
        for l in 0..m {
            let wrap = |e: Error| Error::Fit {
                sweep,
                tree: l,
                source: Box::new(e),
            };
            for (r, f) in resid.iter_mut().zip(&fits[l]) {
                *r += f;
            }
            let ctx = GrowContext {
                x,
                grid: &cut_grid,
                prior: &priors.split,
                limits: &config.limits,
                sigma2,
                sigma_mu2,
                gate: config.gate,
            };
            let grown = grow_from_root(&ctx, root.clone(), &resid, &mut rng).map_err(wrap)?;
            let search = search_bandwidth(&grown.tree, &resid, x, &bw_grid, sigma2, sigma_mu2).map_err(wrap)?;
            let mut candidate = grown.tree;
            candidate.tau = search.tau;
            let incumbent_ll = tree_log_marginal(&trees[l], x, &resid, sigma2, sigma_mu2).map_err(wrap)?;
            let (chosen, took) = mh_accept(
                ScoredTree {
                    tree: candidate,
                    log_marginal: search.log_marginal,
                },
                ScoredTree {
                    tree: std::mem::replace(&mut trees[l], DecisionTree::single_leaf(0.0, config.gate)),
                    log_marginal: incumbent_ll,
                },
                &priors.split,
                &mut rng,
            );
            accepted += usize::from(took);
            let mut tree = chosen.tree;
            draw_leaves(&mut tree, x, &resid, sigma2, sigma_mu2, &mut rng).map_err(wrap)?;
            tree_fit(&tree, x, &mut fits[l]);
            for (r, f) in resid.iter_mut().zip(&fits[l]) {
                *r -= f;
            }
            trees[l] = tree;
        }
        sigma2 = draw_sigma2(&resid, &priors.sigma, &mut rng);

        let drift = (0..n)
            .map(|i| {
                let total: f64 = fits.iter().map(|f| f[i]).sum();
                (y[i] - total - resid[i]).abs()
            })
            .fold(0.0, f64::max);
        trace.sigma2.push(sigma2 * unscale2);
        trace.residual_drift.push(drift);
        trace.accepted.push(accepted);
        trace.smoothed.push(trees.iter().filter(|t| t.tau > 0.0).count());
        trace
            .mean_leaves
            .push(trees.iter().map(|t| t.leaf_count() as f64).sum::<f64>() / m as f64);
        debug!(
            "sweep {sweep}: sigma2 = {:.5}, accepted = {accepted}/{m}, smoothed = {}, mean leaves = {:.2}",
            sigma2 * unscale2,
            trace.smoothed[sweep],
            trace.mean_leaves[sweep]
        );
        if sweep >= config.burn_in {
            forests.push(Forest {
                trees: trees.clone(),
                sigma2,
            });
        }
    }

    Ok(FittedModel {
        feature_names: data.names.clone(),
        is_dummy: data.is_dummy.clone(),
        schema: None,
        config: config.clone(),
        priors,
        y_center: scaling.center,
        y_scale: scaling.scale,
        bandwidth: bw_grid,
        forests,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_data() -> Dataset {
        let xs: Vec<f64> = (0..60).map(|i| i as f64 / 60.0).collect();
        let y: Vec<f64> = xs.iter().map(|v| if *v < 0.5 { 1.0 } else { 3.0 }).collect();
        Dataset::from_ordinal(FeatureMatrix::from_columns(vec![xs]).unwrap(), y).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = FitConfig::default();
        assert!(c.validate().is_ok());
        c.burn_in = c.sweeps;
        assert!(c.validate().is_err());
        let c = FitConfig {
            grid_percents: vec![1.0, 2.0],
            ..FitConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hard_gate_forces_zero_grid() {
        let c = FitConfig {
            gate: GateFamily::Hard,
            ..FitConfig::default()
        };
        assert_eq!(c.effective_grid(), vec![0.0]);
        assert!(c.is_hard_mode());
    }

    #[test]
    fn trace_and_retention_lengths() {
        let c = FitConfig {
            trees: 3,
            sweeps: 6,
            burn_in: 2,
            ..FitConfig::default()
        };
        let model = fit(&small_data(), &c).unwrap();
        assert_eq!(model.trace.sigma2.len(), 6);
        assert_eq!(model.forests.len(), 4);
        assert!(model.trace.sigma2.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn mismatched_response_is_rejected() {
        let mut d = small_data();
        d.y.pop();
        assert!(fit(&d, &FitConfig::default()).is_err());
    }

    #[test]
    fn per_sweep_mean_equals_posterior_mean() {
        let c = FitConfig {
            trees: 2,
            sweeps: 4,
            burn_in: 1,
            ..FitConfig::default()
        };
        let d = small_data();
        let model = fit(&d, &c).unwrap();
        let mean = model.predict(&d.x, Aggregation::PosteriorMean).unwrap().into_mean();
        let per = match model.predict(&d.x, Aggregation::PerSweep).unwrap() {
            Prediction::PerSweep(m) => m,
            _ => unreachable!(),
        };
        assert_eq!(per.len(), 3);
        assert_eq!(average_rows(&per), mean);
    }
}

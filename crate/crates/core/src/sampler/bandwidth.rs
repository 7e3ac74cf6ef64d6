//! Per-tree bandwidth selection by grid search over sample-coverage
//! percentages.
//!
//! A grid point `p` maps a branch `(feature, cutpoint)` to the smallest
//! `tau` whose window `[c - tau, c + tau]` covers at least `2p%` of the
//! training rows. The tree-level bandwidth for `p` is the median of these
//! values over the tree's smoothable branches.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::likelihood::{hard_log_marginal, LeafSuffStats, SoftStatsBuilder, SoftSuffStats};
use crate::tree::{DecisionTree, NodeKind, Router};

/// Grid percentages plus the sorted training values of every feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub percents: Vec<f64>,
    pub sorted_features: Vec<Vec<f64>>,
}

impl BandwidthGrid {
    pub fn new(percents: Vec<f64>, x: &FeatureMatrix) -> Result<Self> {
        validate_percents(&percents)?;
        let sorted_features = x
            .columns()
            .iter()
            .map(|c| {
                let mut v = c.clone();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        Ok(BandwidthGrid {
            percents,
            sorted_features,
        })
    }
}

pub(crate) fn validate_percents(percents: &[f64]) -> Result<()> {
    if percents.first() != Some(&0.0) {
        return Err(Error::invalid("bandwidth grid must start at 0%"));
    }
    if percents.iter().any(|p| !(0.0..=50.0).contains(p)) {
        return Err(Error::invalid("bandwidth grid percents must lie in [0, 50]"));
    }
    if percents.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bandwidth grid percents must be strictly increasing"));
    }
    Ok(())
}

/// Rows the window must cover: `ceil(2 p n / 100)`.
fn required_count(percent: f64, n: usize) -> usize {
    let exact = 2.0 * percent * n as f64 / 100.0;
    let k = (exact - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Smallest `tau` with at least `2p%` of the training values of `feature`
/// inside `[cutpoint - tau, cutpoint + tau]`.
pub fn percent_to_tau(percent: f64, feature: usize, cutpoint: f64, grid: &BandwidthGrid) -> Result<f64> {
    if !(0.0..=50.0).contains(&percent) {
        return Err(Error::invalid(format!("percent {percent} not in [0, 50]")));
    }
    let values = grid
        .sorted_features
        .get(feature)
        .ok_or_else(|| Error::invalid(format!("feature {feature} out of range")))?;
    let k = required_count(percent, values.len());
    if k == 0 {
        return Ok(0.0);
    }
    // the k-th smallest |x - c|, merging outward from c
    let mut hi = values.partition_point(|&v| v < cutpoint);
    let mut lo = hi;
    let mut last = 0.0;
    for _ in 0..k {
        let dl = if lo > 0 { cutpoint - values[lo - 1] } else { f64::INFINITY };
        let dh = if hi < values.len() { values[hi] - cutpoint } else { f64::INFINITY };
        if dl <= dh {
            last = dl;
            lo -= 1;
        } else {
            last = dh;
            hi += 1;
        }
    }
    Ok(last)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Tree-level bandwidth for grid point `percent`: the median branch value
/// over smoothable branches (0 if there are none).
pub fn tree_tau(tree: &DecisionTree, percent: f64, grid: &BandwidthGrid) -> Result<f64> {
    let per_node = tree
        .nodes
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Branch {
                split_var,
                cutpoint,
                smooth: true,
                ..
            } => Some(percent_to_tau(percent, split_var, cutpoint, grid)),
            _ => None,
        })
        .collect::<Result<Vec<f64>>>()?;
    if per_node.is_empty() {
        return Ok(0.0);
    }
    Ok(median(per_node))
}

/// Hard sufficient statistics of a tree over all rows (bandwidth ignored).
pub(crate) fn hard_stats(tree: &DecisionTree, x: &FeatureMatrix, residuals: &[f64]) -> Result<LeafSuffStats> {
    let router = Router::new(tree);
    let assign: Vec<usize> = (0..x.n_rows())
        .map(|i| router.slot(tree.hard_leaf(|j| x.get(i, j))))
        .collect();
    LeafSuffStats::from_assignments(&assign, residuals, router.n_leaves())
}

/// Soft sufficient statistics of a tree at its own bandwidth.
pub(crate) fn soft_stats(tree: &DecisionTree, x: &FeatureMatrix, residuals: &[f64], sigma2: f64) -> SoftSuffStats {
    let mut router = Router::new(tree);
    let mut phi = vec![0.0; router.n_leaves()];
    let mut builder = SoftStatsBuilder::new(router.n_leaves());
    for (i, &r) in residuals.iter().enumerate() {
        router.route(|j| x.get(i, j), &mut phi);
        builder.push(&phi, r);
    }
    builder.finish(sigma2)
}

/// Log marginal likelihood of a tree at its current bandwidth.
pub fn tree_log_marginal(
    tree: &DecisionTree,
    x: &FeatureMatrix,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
) -> Result<f64> {
    if tree.tau > 0.0 && tree.has_smooth_branch() {
        soft_stats(tree, x, residuals, sigma2).log_marginal(sigma_mu2)
    } else {
        hard_log_marginal(&hard_stats(tree, x, residuals)?, sigma2, sigma_mu2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthCandidate {
    pub percent: f64,
    pub tau: f64,
    /// `None` when the soft likelihood failed numerically at this point.
    pub log_marginal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSearch {
    pub tau: f64,
    pub percent: f64,
    pub log_marginal: f64,
    pub candidates: Vec<BandwidthCandidate>,
}

/// Evaluates the soft marginal likelihood of a hard tree at every grid
/// bandwidth and returns the maximiser (first one on ties).
pub fn search_bandwidth(
    tree: &DecisionTree,
    residuals: &[f64],
    x: &FeatureMatrix,
    grid: &BandwidthGrid,
    sigma2: f64,
    sigma_mu2: f64,
) -> Result<BandwidthSearch> {
    if tree.tau != 0.0 {
        return Err(Error::invalid("bandwidth search expects a hard tree"));
    }
    if residuals.len() != x.n_rows() {
        return Err(Error::invalid("one residual per row is required"));
    }
    let hard = hard_log_marginal(&hard_stats(tree, x, residuals)?, sigma2, sigma_mu2)?;
    if !tree.has_smooth_branch() {
        return Ok(BandwidthSearch {
            tau: 0.0,
            percent: 0.0,
            log_marginal: hard,
            candidates: vec![BandwidthCandidate {
                percent: 0.0,
                tau: 0.0,
                log_marginal: Some(hard),
            }],
        });
    }

    let mut candidates: Vec<BandwidthCandidate> = Vec::with_capacity(grid.percents.len());
    let mut best: Option<(f64, f64, f64)> = None;
    let mut work = tree.clone();
    for &percent in &grid.percents {
        let tau = tree_tau(tree, percent, grid)?;
        let value = if tau == 0.0 {
            Some(hard)
        } else if let Some(prev) = candidates.iter().find(|c| c.tau == tau) {
            prev.log_marginal
        } else {
            work.tau = tau;
            match soft_stats(&work, x, residuals, sigma2).log_marginal(sigma_mu2) {
                Ok(v) => Some(v),
                Err(e) => {
                    debug!("bandwidth {tau} ({percent}%) skipped: {e}");
                    None
                }
            }
        };
        if let Some(v) = value {
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((tau, percent, v));
            }
        }
        candidates.push(BandwidthCandidate {
            percent,
            tau,
            log_marginal: value,
        });
    }
    let (tau, percent, log_marginal) =
        best.ok_or_else(|| Error::Numerical("every bandwidth candidate failed".into()))?;
    Ok(BandwidthSearch {
        tau,
        percent,
        log_marginal,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1_to_100() -> BandwidthGrid {
        let x = FeatureMatrix::from_columns(vec![(1..=100).map(f64::from).collect()]).unwrap();
        BandwidthGrid::new(vec![0.0, 10.0], &x).unwrap()
    }

    #[test]
    fn zero_percent_is_zero_tau() {
        assert_eq!(percent_to_tau(0.0, 0, 50.0, &grid_1_to_100()).unwrap(), 0.0);
    }

    #[test]
    fn counting_on_explicit_grid() {
        let g = grid_1_to_100();
        assert_eq!(percent_to_tau(10.0, 0, 50.0, &g).unwrap(), 10.0);
        // one-sided at the minimum: 20 points needed, reaching x = 20
        assert_eq!(percent_to_tau(10.0, 0, 1.0, &g).unwrap(), 19.0);
        let count = |tau: f64, c: f64| (1..=100).filter(|&v| (f64::from(v) - c).abs() <= tau).count();
        assert!(count(19.0, 1.0) >= 20 && count(18.999, 1.0) < 20);
    }

    #[test]
    fn tau_non_decreasing_in_percent() {
        let g = grid_1_to_100();
        let mut prev = 0.0;
        for p in 0..=50 {
            let t = percent_to_tau(f64::from(p), 0, 37.3, &g).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn feature_out_of_range() {
        assert!(percent_to_tau(5.0, 3, 0.0, &grid_1_to_100()).is_err());
    }

    #[test]
    fn percents_validation() {
        assert!(validate_percents(&[0.0, 1.0, 2.0]).is_ok());
        assert!(validate_percents(&[1.0, 2.0]).is_err());
        assert!(validate_percents(&[0.0, 2.0, 2.0]).is_err());
        assert!(validate_percents(&[0.0, 60.0]).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

//! Grow-from-root sampling of hard candidate trees.
//!
//! At every node the hard marginal likelihood of each admissible
//! `(feature, cutpoint)` split is computed with one cumulative sweep per
//! feature over presorted row indices. A split (or stop) is then sampled with
//! weights proportional to the likelihoods and the depth prior, and the
//! procedure recurses into both children.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::likelihood::{base_log_term, leaf_log_term};
use crate::tree::{DecisionTree, GateFamily, NodeKind, TreeNode};

/// Depth-dependent split probability `alpha (1 + d)^-beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SplitPrior {
    fn default() -> Self {
        SplitPrior {
            alpha: 0.95,
            beta: 2.0,
        }
    }
}

impl SplitPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "split prior needs 0 < alpha < 1 and beta >= 0 (alpha = {}, beta = {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

pub fn split_prob(depth: usize, prior: &SplitPrior) -> f64 {
    prior.alpha * (1.0 + depth as f64).powf(-prior.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowLimits {
    pub max_depth: usize,
    /// Minimum number of rows in each child of a split.
    pub min_node_size: usize,
    /// Features considered per node; `None` means all of them.
    pub features_per_node: Option<usize>,
}

impl Default for GrowLimits {
    fn default() -> Self {
        GrowLimits {
            max_depth: 10,
            min_node_size: 5,
            features_per_node: None,
        }
    }
}

/// Candidate cutpoints per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutpointGrid {
    pub cuts: Vec<Vec<f64>>,
    pub is_dummy: Vec<bool>,
}

impl CutpointGrid {
    /// Midpoints between consecutive distinct values, thinned to at most
    /// `max_per_feature` by uniform striding. Dummy features get the single
    /// cutpoint 0.5.
    pub fn from_data(x: &FeatureMatrix, is_dummy: &[bool], max_per_feature: usize) -> Result<Self> {
        if is_dummy.len() != x.n_cols() {
            return Err(Error::invalid("one dummy flag per feature is required"));
        }
        if max_per_feature == 0 {
            return Err(Error::invalid("max_per_feature must be >= 1"));
        }
        let cuts = (0..x.n_cols())
            .map(|j| {
                if is_dummy[j] {
                    return vec![0.5];
                }
                let mut v = x.col(j).to_vec();
                v.sort_by(f64::total_cmp);
                v.dedup();
                let mids: Vec<f64> = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                thin(mids, max_per_feature)
            })
            .collect();
        Ok(CutpointGrid {
            cuts,
            is_dummy: is_dummy.to_vec(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }
}

fn thin(mids: Vec<f64>, max: usize) -> Vec<f64> {
    if mids.len() <= max {
        return mids;
    }
    let len = mids.len();
    let mut out: Vec<f64> = (0..max)
        .map(|k| {
            // centred strides over [0, len)
            let pos = ((k as f64 + 0.5) * len as f64 / max as f64).floor() as usize;
            mids[pos.min(len - 1)]
        })
        .collect();
    out.dedup();
    out
}

/// Rows reaching a node, with per-feature orderings restricted to them.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeWorkset {
    pub indices: Vec<usize>,
    pub sorted: Vec<Vec<usize>>,
    pub depth: usize,
}

impl NodeWorkset {
    pub fn root(x: &FeatureMatrix) -> Self {
        let indices: Vec<usize> = (0..x.n_rows()).collect();
        let sorted = (0..x.n_cols())
            .map(|j| {
                let col = x.col(j);
                let mut idx = indices.clone();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        NodeWorkset {
            indices,
            sorted,
            depth: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Splits into (left, right) by `x_j < c`; `mask` is scratch of length n.
    fn partition(&self, x: &FeatureMatrix, feature: usize, cut: f64, mask: &mut [bool]) -> (Self, Self) {
        let col = x.col(feature);
        for &i in &self.indices {
            mask[i] = col[i] < cut;
        }
        let split = |list: &[usize]| -> (Vec<usize>, Vec<usize>) { list.iter().partition(|&&i| mask[i]) };
        let (li, ri) = split(&self.indices);
        let (ls, rs): (Vec<_>, Vec<_>) = self.sorted.iter().map(|s| split(s)).unzip();
        let depth = self.depth + 1;
        (
            NodeWorkset {
                indices: li,
                sorted: ls,
                depth,
            },
            NodeWorkset {
                indices: ri,
                sorted: rs,
                depth,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub cutpoint: f64,
    pub n_left: usize,
    pub log_lik: f64,
}

/// Log marginal likelihoods of every admissible split of a node, plus the
/// no-split value.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTable {
    pub candidates: Vec<SplitCandidate>,
    pub no_split: f64,
}

/// Enumerates `x_j < c` splits whose children both hold at least
/// `min_child` rows (`min_child` of 0 or 1 just excludes empty children).
pub fn enumerate_split_loglik(
    work: &NodeWorkset,
    grid: &CutpointGrid,
    x: &FeatureMatrix,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
    min_child: usize,
) -> Result<SplitTable> {
    let features: Vec<usize> = (0..grid.n_features()).collect();
    enumerate_features(work, grid, x, residuals, sigma2, sigma_mu2, min_child, &features)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_features(
    work: &NodeWorkset,
    grid: &CutpointGrid,
    x: &FeatureMatrix,
    residuals: &[f64],
    sigma2: f64,
    sigma_mu2: f64,
    min_child: usize,
    features: &[usize],
) -> Result<SplitTable> {
    if work.is_empty() {
        return Err(Error::invalid("cannot enumerate splits of an empty node"));
    }
    if !(sigma2 > 0.0) || !(sigma_mu2 > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let n = work.len();
    let (total, sum_sq) = work
        .indices
        .iter()
        .fold((0.0, 0.0), |(s, q), &i| (s + residuals[i], q + residuals[i] * residuals[i]));
    let base = base_log_term(n, sum_sq, sigma2);
    let no_split = base + 0.5 * leaf_log_term(n, total, sigma2, sigma_mu2);
    let min_child = min_child.max(1);

    let mut candidates = Vec::new();
    if n < 2 * min_child {
        return Ok(SplitTable { candidates, no_split });
    }
    for &j in features {
        let col = x.col(j);
        let order = &work.sorted[j];
        let lo = col[order[0]];
        let hi = col[order[n - 1]];
        let cuts = &grid.cuts[j];
        // skip cutpoints at or below the node minimum
        let start = cuts.partition_point(|&c| c <= lo);
        let mut ptr = 0usize;
        let mut s_left = 0.0;
        for &c in &cuts[start..] {
            if c > hi {
                break;
            }
            while ptr < n && col[order[ptr]] < c {
                s_left += residuals[order[ptr]];
                ptr += 1;
            }
            let n_right = n - ptr;
            if n_right < min_child {
                break;
            }
            if ptr < min_child {
                continue;
            }
            let ll = base
                + 0.5
                    * (leaf_log_term(ptr, s_left, sigma2, sigma_mu2)
                        + leaf_log_term(n_right, total - s_left, sigma2, sigma_mu2));
            candidates.push(SplitCandidate {
                feature: j,
                cutpoint: c,
                n_left: ptr,
                log_lik: ll,
            });
        }
    }
    Ok(SplitTable { candidates, no_split })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitDecision {
    Stop,
    Split { feature: usize, cutpoint: f64 },
}

/// Log weight of stopping: `log(|C| (1 - p_d) / p_d) + no_split`.
pub fn stop_log_weight(table: &SplitTable, depth: usize, prior: &SplitPrior) -> f64 {
    let p = split_prob(depth, prior);
    if table.candidates.is_empty() || p <= 0.0 {
        return f64::INFINITY;
    }
    (table.candidates.len() as f64).ln() + (1.0 - p).ln() - p.ln() + table.no_split
}

/// Samples stop or one split with weights `exp(log_lik)` per split and
/// `|C| (1 - p_d) / p_d exp(no_split)` for stopping.
pub fn sample_split_or_stop<R: Rng + ?Sized>(
    table: &SplitTable,
    depth: usize,
    prior: &SplitPrior,
    rng: &mut R,
) -> SplitDecision {
    let stop = stop_log_weight(table, depth, prior);
    if stop == f64::INFINITY {
        return SplitDecision::Stop;
    }
    let max = table
        .candidates
        .iter()
        .map(|c| c.log_lik)
        .fold(stop, f64::max);
    let stop_w = (stop - max).exp();
    let total: f64 = stop_w + table.candidates.iter().map(|c| (c.log_lik - max).exp()).sum::<f64>();
    let mut u = rng.random::<f64>() * total;
    if u < stop_w {
        return SplitDecision::Stop;
    }
    u -= stop_w;
    for c in &table.candidates {
        let w = (c.log_lik - max).exp();
        if u < w {
            return SplitDecision::Split {
                feature: c.feature,
                cutpoint: c.cutpoint,
            };
        }
        u -= w;
    }
    // rounding fell off the end
    let last = table.candidates.last().expect("non-empty");
    SplitDecision::Split {
        feature: last.feature,
        cutpoint: last.cutpoint,
    }
}

/// Everything the grower needs besides the residuals.
#[derive(Debug, Clone, Copy)]
pub struct GrowContext<'a> {
    pub x: &'a FeatureMatrix,
    pub grid: &'a CutpointGrid,
    pub prior: &'a SplitPrior,
    pub limits: &'a GrowLimits,
    pub sigma2: f64,
    pub sigma_mu2: f64,
    pub gate: GateFamily,
}

/// A freshly grown hard tree with the training rows that reached each node.
#[derive(Debug, Clone, PartialEq)]
pub struct GrownTree {
    pub tree: DecisionTree,
    /// Row indices per node id.
    pub node_rows: Vec<Vec<usize>>,
}

/// Grows a hard tree (bandwidth 0, leaf values 0) from the root.
pub fn grow_from_root<R: Rng + ?Sized>(
    ctx: &GrowContext<'_>,
    root: NodeWorkset,
    residuals: &[f64],
    rng: &mut R,
) -> Result<GrownTree> {
    if residuals.len() != ctx.x.n_rows() {
        return Err(Error::invalid(format!(
            "{} residuals for {} rows",
            residuals.len(),
            ctx.x.n_rows()
        )));
    }
    if ctx.grid.n_features() != ctx.x.n_cols() {
        return Err(Error::invalid("cutpoint grid does not match the feature matrix"));
    }
    ctx.prior.validate()?;
    let p = ctx.x.n_cols();
    let mut mask = vec![false; ctx.x.n_rows()];
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut node_rows: Vec<Vec<usize>> = Vec::new();
    let all_features: Vec<usize> = (0..p).collect();

    nodes.push(TreeNode {
        id: 0,
        depth: 0,
        kind: NodeKind::Leaf { value: 0.0 },
    });
    node_rows.push(Vec::new());
    let mut stack = vec![(0usize, root)];
    while let Some((id, work)) = stack.pop() {
        let decision = if work.depth >= ctx.limits.max_depth || work.is_empty() {
            SplitDecision::Stop
        } else {
            let sampled;
            let features: &[usize] = match ctx.limits.features_per_node {
                Some(k) if k < p => {
                    sampled = sample_indices(rng, p, k).into_vec();
                    &sampled
                }
                _ => &all_features,
            };
            let table = enumerate_features(
                &work,
                ctx.grid,
                ctx.x,
                residuals,
                ctx.sigma2,
                ctx.sigma_mu2,
                ctx.limits.min_node_size,
                features,
            )?;
            sample_split_or_stop(&table, work.depth, ctx.prior, rng)
        };
        match decision {
            SplitDecision::Stop => node_rows[id] = work.indices,
            SplitDecision::Split { feature, cutpoint } => {
                let (left, right) = work.partition(ctx.x, feature, cutpoint, &mut mask);
                let (lid, rid) = (nodes.len(), nodes.len() + 1);
                for cid in [lid, rid] {
                    nodes.push(TreeNode {
                        id: cid,
                        depth: work.depth + 1,
                        kind: NodeKind::Leaf { value: 0.0 },
                    });
                    node_rows.push(Vec::new());
                }
                nodes[id].kind = NodeKind::Branch {
                    split_var: feature,
                    cutpoint,
                    left: lid,
                    right: rid,
                    smooth: !ctx.grid.is_dummy[feature],
                };
                node_rows[id] = work.indices;
                stack.push((rid, right));
                stack.push((lid, left));
            }
        }
    }
    Ok(GrownTree {
        tree: DecisionTree {
            nodes,
            root: 0,
            tau: 0.0,
            gate: ctx.gate,
        },
        node_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{hard_log_marginal, LeafSuffStats};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_prob_values() {
        let prior = SplitPrior::default();
        assert_eq!(split_prob(0, &prior), 0.95);
        assert!((split_prob(1, &prior) - 0.2375).abs() < 1e-15);
        let flat = SplitPrior { alpha: 0.6, beta: 0.0 };
        assert!((0..20).all(|d| split_prob(d, &flat) == 0.6));
    }

    fn one_feature(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_columns(vec![xs.to_vec()]).unwrap()
    }

    #[test]
    fn toy_node_prefers_midpoint() {
        let x = one_feature(&[1.0, 2.0, 3.0, 4.0]);
        let r = [1.0, 1.0, -1.0, -1.0];
        let grid = CutpointGrid::from_data(&x, &[false], 100).unwrap();
        assert_eq!(grid.cuts[0], vec![1.5, 2.5, 3.5]);
        let work = NodeWorkset::root(&x);
        let table = enumerate_split_loglik(&work, &grid, &x, &r, 0.5, 1.0, 1).unwrap();
        assert_eq!(table.candidates.len(), 3);
        // brute force with the likelihood module
        let brute: Vec<f64> = [1usize, 2, 3]
            .iter()
            .map(|&k| {
                let assign: Vec<usize> = (0..4).map(|i| usize::from(i >= k)).collect();
                let s = LeafSuffStats::from_assignments(&assign, &r, 2).unwrap();
                hard_log_marginal(&s, 0.5, 1.0).unwrap()
            })
            .collect();
        for (c, b) in table.candidates.iter().zip(&brute) {
            assert!((c.log_lik - b).abs() < 1e-10);
        }
        let best = table
            .candidates
            .iter()
            .max_by(|a, b| a.log_lik.total_cmp(&b.log_lik))
            .unwrap();
        assert_eq!(best.cutpoint, 2.5);
    }

    #[test]
    fn empty_children_are_excluded() {
        let x = one_feature(&[1.0, 1.0, 1.0]);
        let grid = CutpointGrid {
            cuts: vec![vec![0.5, 1.5]],
            is_dummy: vec![false],
        };
        let work = NodeWorkset::root(&x);
        let table = enumerate_split_loglik(&work, &grid, &x, &[1.0, 2.0, 3.0], 1.0, 1.0, 1).unwrap();
        assert!(table.candidates.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_split_or_stop(&table, 0, &SplitPrior::default(), &mut rng),
            SplitDecision::Stop
        );
    }

    #[test]
    fn empty_node_is_an_error() {
        let x = one_feature(&[1.0]);
        let grid = CutpointGrid::from_data(&x, &[false], 10).unwrap();
        let work = NodeWorkset {
            indices: vec![],
            sorted: vec![vec![]],
            depth: 0,
        };
        assert!(enumerate_split_loglik(&work, &grid, &x, &[0.0], 1.0, 1.0, 1).is_err());
    }

    #[test]
    fn equal_weights_split_half_the_time() {
        // single candidate, equal likelihoods, p_d = 0.5, |C| = 1
        let table = SplitTable {
            candidates: vec![SplitCandidate {
                feature: 0,
                cutpoint: 0.0,
                n_left: 1,
                log_lik: -3.0,
            }],
            no_split: -3.0,
        };
        let prior = SplitPrior { alpha: 0.5, beta: 0.0 };
        assert!((stop_log_weight(&table, 0, &prior) - (-3.0)).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let splits = (0..draws)
            .filter(|_| matches!(sample_split_or_stop(&table, 0, &prior, &mut rng), SplitDecision::Split { .. }))
            .count();
        let freq = splits as f64 / draws as f64;
        let se = (0.25 / draws as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * se, "freq = {freq}");
    }

    #[test]
    fn tiny_split_probability_stops() {
        let table = SplitTable {
            candidates: vec![SplitCandidate {
                feature: 0,
                cutpoint: 0.0,
                n_left: 1,
                log_lik: 0.0,
            }],
            no_split: 0.0,
        };
        let prior = SplitPrior { alpha: 1e-300, beta: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_split_or_stop(&table, 0, &prior, &mut rng), SplitDecision::Stop);
        }
    }

    #[test]
    fn min_node_size_equal_to_n_gives_a_leaf() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let x = one_feature(&xs);
        let r: Vec<f64> = xs.iter().map(|v| if *v < 10.0 { -1.0 } else { 1.0 }).collect();
        let grid = CutpointGrid::from_data(&x, &[false], 100).unwrap();
        let limits = GrowLimits {
            min_node_size: 20,
            ..GrowLimits::default()
        };
        let prior = SplitPrior::default();
        let ctx = GrowContext {
            x: &x,
            grid: &grid,
            prior: &prior,
            limits: &limits,
            sigma2: 0.01,
            sigma_mu2: 1.0,
            gate: GateFamily::Linear,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = grow_from_root(&ctx, NodeWorkset::root(&x), &r, &mut rng).unwrap();
            assert_eq!(g.tree.nodes.len(), 1);
        }
    }

    #[test]
    fn grid_thinning_bounds_and_orders() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sqrt()).collect();
        let x = one_feature(&xs);
        let grid = CutpointGrid::from_data(&x, &[false], 100).unwrap();
        assert!(grid.cuts[0].len() <= 100 && grid.cuts[0].len() > 90);
        assert!(grid.cuts[0].windows(2).all(|w| w[0] < w[1]));
        let dummy = CutpointGrid::from_data(&x, &[true], 100).unwrap();
        assert_eq!(dummy.cuts[0], vec![0.5]);
    }
}

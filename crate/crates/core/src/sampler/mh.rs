//! Metropolis-Hastings choice between a freshly grown candidate tree and the
//! incumbent. Both are grown from the root, so the proposal ratio is 1 and
//! only the marginal likelihoods and depth priors enter the ratio.

use log::warn;
use rand::Rng;

use crate::grow::{split_prob, SplitPrior};
use crate::tree::DecisionTree;

/// `sum_branches log p_d + sum_leaves log(1 - p_d)`.
pub fn tree_log_prior(tree: &DecisionTree, prior: &SplitPrior) -> f64 {
    tree.nodes
        .iter()
        .map(|n| {
            let p = split_prob(n.depth, prior);
            if n.is_leaf() {
                (1.0 - p).ln()
            } else {
                p.ln()
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTree {
    pub tree: DecisionTree,
    /// Marginal likelihood against the current partial residual.
    pub log_marginal: f64,
}

impl ScoredTree {
    pub fn log_posterior(&self, prior: &SplitPrior) -> f64 {
        self.log_marginal + tree_log_prior(&self.tree, prior)
    }
}

pub fn acceptance_log_ratio(candidate: &ScoredTree, incumbent: &ScoredTree, prior: &SplitPrior) -> f64 {
    candidate.log_posterior(prior) - incumbent.log_posterior(prior)
}

/// Returns the chosen tree and whether it is the candidate.
pub fn mh_accept<R: Rng + ?Sized>(
    candidate: ScoredTree,
    incumbent: ScoredTree,
    prior: &SplitPrior,
    rng: &mut R,
) -> (ScoredTree, bool) {
    if !candidate.log_marginal.is_finite() {
        warn!("candidate tree has non-finite log marginal {}; rejected", candidate.log_marginal);
        return (incumbent, false);
    }
    if !incumbent.log_marginal.is_finite() {
        return (candidate, true);
    }
    let log_ratio = acceptance_log_ratio(&candidate, &incumbent, prior);
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        (candidate, true)
    } else {
        (incumbent, false)
    }
}

//! Tree and forest representation, gating functions and leaf-probability
//! traversal.
//!
//! Routing convention: smaller feature values go left. For the smooth gates
//! the left probability is `psi((c - x) / tau)`; the hard gate (and any gate
//! with `tau == 0`) sends `x < c` left and `x >= c` right.
//!
//! Leaves are always enumerated depth-first, left child first. Every leaf
//! probability vector and every leaf-value vector in the crate uses that
//! order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

/// Gating family used at branch nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateFamily {
    Hard,
    Sigmoid,
    #[default]
    Linear,
}

impl GateFamily {
    /// Probability of routing left, without argument validation.
    #[inline]
    pub fn left_prob(self, x: f64, cutpoint: f64, tau: f64) -> f64 {
        if tau <= 0.0 || self == GateFamily::Hard {
            return if x < cutpoint { 1.0 } else { 0.0 };
        }
        let u = (cutpoint - x) / tau;
        match self {
            GateFamily::Sigmoid => logistic(u),
            GateFamily::Linear => (0.5 * u + 0.5).clamp(0.0, 1.0),
            GateFamily::Hard => unreachable!(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateFamily::Hard => "hard",
            GateFamily::Sigmoid => "sigmoid",
            GateFamily::Linear => "linear",
        }
    }
}

impl fmt::Display for GateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Ok(GateFamily::Hard),
            "sigmoid" => Ok(GateFamily::Sigmoid),
            "linear" => Ok(GateFamily::Linear),
            other => Err(Error::invalid(format!("unknown gate family '{other}'"))),
        }
    }
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Checked left-routing probability for a single gate.
pub fn gate_left_prob(x: f64, cutpoint: f64, tau: f64, family: GateFamily) -> Result<f64> {
    if !x.is_finite() || !cutpoint.is_finite() {
        return Err(Error::invalid(format!(
            "gate inputs must be finite (x = {x}, cutpoint = {cutpoint})"
        )));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::invalid(format!("bandwidth must be finite and >= 0, got {tau}")));
    }
    Ok(family.left_prob(x, cutpoint, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    Branch {
        split_var: usize,
        cutpoint: f64,
        left: usize,
        right: usize,
        /// Whether the tree bandwidth applies here. Dummy-variable splits
        /// stay hard.
        smooth: bool,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Binary decision tree with a single tree-level gating bandwidth.
///
/// Node ids equal their position in `nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    /// Gating bandwidth; zero makes every branch deterministic.
    pub tau: f64,
    pub gate: GateFamily,
}

impl DecisionTree {
    pub fn single_leaf(value: f64, gate: GateFamily) -> Self {
        DecisionTree {
            nodes: vec![TreeNode {
                id: 0,
                depth: 0,
                kind: NodeKind::Leaf { value },
            }],
            root: 0,
            tau: 0.0,
            gate,
        }
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Structure("tree has no nodes".into()));
        }
        if self.root >= n {
            return Err(Error::Structure(format!("root id {} out of range", self.root)));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::Structure(format!("bandwidth {} is not >= 0", self.tau)));
        }
        if self.nodes[self.root].depth != 0 {
            return Err(Error::Structure("root depth must be 0".into()));
        }
        let mut parents = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Structure(format!("node at position {i} has id {}", node.id)));
            }
            match node.kind {
                NodeKind::Branch {
                    cutpoint,
                    left,
                    right,
                    ..
                } => {
                    if !cutpoint.is_finite() {
                        return Err(Error::Structure(format!("node {i} has a non-finite cutpoint")));
                    }
                    if left >= n || right >= n || left == right {
                        return Err(Error::Structure(format!("node {i} has invalid children")));
                    }
                    for child in [left, right] {
                        if self.nodes[child].depth != node.depth + 1 {
                            return Err(Error::Structure(format!(
                                "child {child} of node {i} has depth {} (expected {})",
                                self.nodes[child].depth,
                                node.depth + 1
                            )));
                        }
                        parents[child] += 1;
                    }
                }
                NodeKind::Leaf { value } => {
                    if value.is_nan() {
                        return Err(Error::Structure(format!("leaf {i} has a NaN value")));
                    }
                }
            }
        }
        for (i, &count) in parents.iter().enumerate() {
            let expected = usize::from(i != self.root);
            if count != expected {
                return Err(Error::Structure(format!("node {i} has {count} parents")));
            }
        }
        // depths strictly increase along edges, so no cycles; check reachability
        let mut seen = 0usize;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            seen += 1;
            if let NodeKind::Branch { left, right, .. } = self.nodes[id].kind {
                stack.push(right);
                stack.push(left);
            }
        }
        if seen != n {
            return Err(Error::Structure(format!("only {seen} of {n} nodes reachable from root")));
        }
        Ok(())
    }

    /// Leaf node ids in depth-first, left-first order.
    pub fn leaf_ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match self.nodes[id].kind {
                NodeKind::Branch { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                NodeKind::Leaf { .. } => out.push(id),
            }
        }
        out
    }

    /// Maps node id to its leaf slot (`usize::MAX` for branches).
    pub(crate) fn leaf_slots(&self) -> Vec<usize> {
        let mut slots = vec![usize::MAX; self.nodes.len()];
        for (slot, id) in self.leaf_ids().into_iter().enumerate() {
            slots[id] = slot;
        }
        slots
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn branch_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Number of features a row needs for this tree.
    pub fn required_features(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Branch { split_var, .. } => Some(split_var + 1),
                NodeKind::Leaf { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// True when at least one branch is eligible for smoothing.
    pub fn has_smooth_branch(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, NodeKind::Branch { smooth: true, .. }))
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaf_ids()
            .into_iter()
            .map(|id| match self.nodes[id].kind {
                NodeKind::Leaf { value } => value,
                NodeKind::Branch { .. } => unreachable!(),
            })
            .collect()
    }

    pub fn set_leaf_values(&mut self, values: &[f64]) -> Result<()> {
        let ids = self.leaf_ids();
        if ids.len() != values.len() {
            return Err(Error::invalid(format!(
                "tree has {} leaves but {} values were supplied",
                ids.len(),
                values.len()
            )));
        }
        for (id, &v) in ids.into_iter().zip(values) {
            self.nodes[id].kind = NodeKind::Leaf { value: v };
        }
        Ok(())
    }

    /// Deterministic traversal: id of the leaf reached by `x` ignoring the
    /// bandwidth.
    pub fn hard_leaf<F: Fn(usize) -> f64>(&self, feature: F) -> usize {
        let mut id = self.root;
        loop {
            match self.nodes[id].kind {
                NodeKind::Branch {
                    split_var,
                    cutpoint,
                    left,
                    right,
                    ..
                } => id = if feature(split_var) < cutpoint { left } else { right },
                NodeKind::Leaf { .. } => return id,
            }
        }
    }

    /// Leaf probability vector for one row, in leaf order.
    pub fn leaf_probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        check_row(self, x)?;
        let mut router = Router::new(self);
        let mut out = vec![0.0; router.n_leaves()];
        router.route(|j| x[j], &mut out);
        Ok(out)
    }

    /// Soft prediction `<phi(x), leaf values>` for one row.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let phi = self.leaf_probabilities(x)?;
        Ok(phi.iter().zip(self.leaf_values()).map(|(p, v)| p * v).sum())
    }
}

fn check_row(tree: &DecisionTree, x: &[f64]) -> Result<()> {
    let need = tree.required_features();
    if x.len() < need {
        return Err(Error::invalid(format!(
            "row has {} features but the tree splits on feature {}",
            x.len(),
            need - 1
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("feature {j} is not finite")));
    }
    Ok(())
}

/// Reusable traversal state for computing many leaf-probability rows of the
/// same tree.
pub(crate) struct Router<'a> {
    tree: &'a DecisionTree,
    slots: Vec<usize>,
    n_leaves: usize,
    stack: Vec<(usize, f64)>,
}

impl<'a> Router<'a> {
    pub(crate) fn new(tree: &'a DecisionTree) -> Self {
        let slots = tree.leaf_slots();
        let n_leaves = slots.iter().filter(|&&s| s != usize::MAX).count();
        Router {
            tree,
            slots,
            n_leaves,
            stack: Vec::with_capacity(32),
        }
    }

    pub(crate) fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub(crate) fn slot(&self, node: usize) -> usize {
        self.slots[node]
    }

    /// Writes the leaf probabilities of one row into `out` (length = leaves).
    /// Subtrees reached with probability zero are skipped.
    pub(crate) fn route<F: Fn(usize) -> f64>(&mut self, feature: F, out: &mut [f64]) {
        out.fill(0.0);
        let tree = self.tree;
        let smooth_tau = tree.tau;
        self.stack.clear();
        self.stack.push((tree.root, 1.0));
        while let Some((id, p)) = self.stack.pop() {
            match tree.nodes[id].kind {
                NodeKind::Branch {
                    split_var,
                    cutpoint,
                    left,
                    right,
                    smooth,
                } => {
                    let tau = if smooth { smooth_tau } else { 0.0 };
                    let q = tree.gate.left_prob(feature(split_var), cutpoint, tau);
                    let pr = p * (1.0 - q);
                    let pl = p * q;
                    if pr > 0.0 {
                        self.stack.push((right, pr));
                    }
                    if pl > 0.0 {
                        self.stack.push((left, pl));
                    }
                }
                NodeKind::Leaf { .. } => out[self.slots[id]] = p,
            }
        }
    }
}

/// Dense `n x B` matrix of per-row leaf probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafProbMatrix {
    n_rows: usize,
    n_leaves: usize,
    data: Vec<f64>,
}

impl LeafProbMatrix {
    /// Leaf probabilities of every row of `x` under `tree`.
    pub fn build(tree: &DecisionTree, x: &FeatureMatrix) -> Result<Self> {
        if x.n_cols() < tree.required_features() {
            return Err(Error::invalid(format!(
                "feature matrix has {} columns but the tree needs {}",
                x.n_cols(),
                tree.required_features()
            )));
        }
        Ok(Self::build_unchecked(tree, x))
    }

    pub(crate) fn build_unchecked(tree: &DecisionTree, x: &FeatureMatrix) -> Self {
        let mut router = Router::new(tree);
        let b = router.n_leaves();
        let n = x.n_rows();
        let mut data = vec![0.0; n * b];
        for (i, row) in data.chunks_mut(b).enumerate() {
            router.route(|j| x.get(i, j), row);
        }
        LeafProbMatrix {
            n_rows: n,
            n_leaves: b,
            data,
        }
    }

    /// Build from explicit rows; each row must lie on the probability simplex.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let b = rows.first().map_or(0, Vec::len);
        if b == 0 {
            return Err(Error::invalid("leaf-probability matrix needs at least one column"));
        }
        let mut data = Vec::with_capacity(rows.len() * b);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != b {
                return Err(Error::invalid(format!("row {i} has {} entries, expected {b}", row.len())));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
            data.extend_from_slice(row);
        }
        Ok(LeafProbMatrix {
            n_rows: rows.len(),
            n_leaves: b,
            data,
        })
    }

    /// One-hot matrix from leaf assignments.
    pub fn one_hot(assignments: &[usize], n_leaves: usize) -> Result<Self> {
        let mut data = vec![0.0; assignments.len() * n_leaves];
        for (i, &a) in assignments.iter().enumerate() {
            if a >= n_leaves {
                return Err(Error::invalid(format!("row {i} assigned to leaf {a} of {n_leaves}")));
            }
            data[i * n_leaves + a] = 1.0;
        }
        Ok(LeafProbMatrix {
            n_rows: assignments.len(),
            n_leaves,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_leaves..(i + 1) * self.n_leaves]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_leaves)
    }

    /// Per-row fitted values `phi_i . values`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|row| row.iter().zip(values).map(|(p, v)| p * v).sum())
            .collect()
    }
}

/// Sum of trees plus the noise variance of one posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub sigma2: f64,
}

impl Forest {
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Structure("forest has no trees".into()));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Structure(format!("forest sigma2 = {} is not > 0", self.sigma2)));
        }
        self.trees.iter().try_for_each(DecisionTree::validate)
    }

    pub fn required_features(&self) -> usize {
        self.trees.iter().map(DecisionTree::required_features).max().unwrap_or(0)
    }
}

/// Soft sum-of-trees prediction for one row.
pub fn predict_single(forest: &Forest, x: &[f64]) -> Result<f64> {
    forest.trees.iter().map(|t| t.predict_row(x)).sum()
}

/// Per-row soft predictions of a forest over a whole matrix (no validation).
pub(crate) fn forest_predict_matrix(forest: &Forest, x: &FeatureMatrix) -> Vec<f64> {
    let mut total = vec![0.0; x.n_rows()];
    for tree in &forest.trees {
        let values = tree.leaf_values();
        let mut router = Router::new(tree);
        let mut phi = vec![0.0; router.n_leaves()];
        for (i, acc) in total.iter_mut().enumerate() {
            router.route(|j| x.get(i, j), &mut phi);
            *acc += phi.iter().zip(&values).map(|(p, v)| p * v).sum::<f64>();
        }
    }
    total
}

//! ID3 decision trees with the output-entropy split penalty, the Priority
//! depth defense, and the differentially private DP-ID3 baseline.
//!
//! All features must be categorical. A split on feature `A` creates one child
//! per category code. Leaves keep their per-class training counts so the
//! with-counts attack can run on a serialized tree.

use serde::{Deserialize, Serialize};

use crate::data::{entropy_of_counts, Dataset, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::privacy::{total_budget, BudgetEntry};
use crate::seed::{sample_laplace, Seed};

/// Two scores closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    #[default]
    InfoGain,
    GiniImpurity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub criterion: SplitCriterion,
    /// Weight of the prediction-entropy penalty.
    pub lambda: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Keep a node as a leaf when every candidate split scores worse than not
    /// splitting, i.e. `C(A) - lambda H(Y_A) < -lambda H(Y)`.
    pub early_stop: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            criterion: SplitCriterion::InfoGain,
            lambda: 0.0,
            max_depth: 8,
            min_samples_split: 2,
            early_stop: true,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.max_depth < 1 {
            return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidArgument("min_samples_split must be >= 2".into()));
        }
        Ok(())
    }
}

/// Which induction procedure produced a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeAlgorithm {
    Id3,
    Priority { min_depth_for_sensitive: usize },
    DpId3 { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Internal {
        feature_index: usize,
        depth: usize,
        /// Class counts of the rows reaching this node.
        class_counts: Vec<f64>,
        /// One entry per category code; `None` when no training row had that
        /// code here.
        children: Vec<Option<Node>>,
    },
    Leaf {
        class_counts: Vec<f64>,
        predicted_class: usize,
        depth: usize,
    },
}

impl Node {
    fn leaf(class_counts: Vec<f64>, depth: usize) -> Node {
        let predicted_class = argmax_lowest(&class_counts);
        Node::Leaf {
            class_counts,
            predicted_class,
            depth,
        }
    }

    pub fn class_counts(&self) -> &[f64] {
        match self {
            Node::Internal { class_counts, .. } | Node::Leaf { class_counts, .. } => class_counts,
        }
    }

    pub fn total(&self) -> f64 {
        self.class_counts().iter().sum()
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Internal { depth, .. } | Node::Leaf { depth, .. } => *depth,
        }
    }

    fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        match self {
            Node::Leaf { .. } => f(self),
            Node::Internal { children, .. } => {
                for c in children.iter().flatten() {
                    c.for_each_leaf(f);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub schema: FeatureSchema,
    pub config: TreeConfig,
    pub algorithm: TreeAlgorithm,
    pub root: Node,
    /// Privacy ledger; empty for non-private trees.
    #[serde(default)]
    pub budget: Vec<BudgetEntry>,
}

/// Result of routing one row through a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePrediction<'a> {
    pub class: usize,
    pub confidence: Vec<f64>,
    /// Per-class counts of the leaf that was reached.
    pub leaf_counts: &'a [f64],
    /// True if some category code had no child and the row was sent to the
    /// most populated sibling instead.
    pub rerouted: bool,
}

impl DecisionTree {
    pub fn num_classes(&self) -> usize {
        self.root.class_counts().len()
    }

    /// Route `row` to a leaf. Missing children are replaced by the most
    /// populated sibling (lowest code on ties).
    pub fn leaf_for(&self, row: &[f64]) -> (&Node, bool) {
        let mut node = &self.root;
        let mut rerouted = false;
        loop {
            match node {
                Node::Leaf { .. } => return (node, rerouted),
                Node::Internal {
                    feature_index,
                    children,
                    ..
                } => {
                    let code = row[*feature_index] as usize;
                    node = match children.get(code).and_then(|c| c.as_ref()) {
                        Some(c) => c,
                        None => {
                            rerouted = true;
                            let mut best: Option<&Node> = None;
                            for c in children.iter().flatten() {
                                if best.is_none_or(|b| c.total() > b.total()) {
                                    best = Some(c);
                                }
                            }
                            best.expect("internal node has at least one child")
                        }
                    };
                }
            }
        }
    }

    pub fn predict_detail(&self, row: &[f64]) -> TreePrediction<'_> {
        let (leaf, rerouted) = self.leaf_for(row);
        let Node::Leaf {
            class_counts,
            predicted_class,
            ..
        } = leaf
        else {
            unreachable!("leaf_for returns a leaf")
        };
        TreePrediction {
            class: *predicted_class,
            confidence: normalize_counts(class_counts),
            leaf_counts: class_counts,
            rerouted,
        }
    }

    /// Predicted class and normalized leaf counts.
    pub fn predict(&self, row: &[f64]) -> (usize, Vec<f64>) {
        let p = self.predict_detail(row);
        (p.class, p.confidence)
    }

    pub fn predict_classes(&self, data: &Dataset) -> Vec<usize> {
        data.rows().iter().map(|r| self.leaf_class(r)).collect()
    }

    fn leaf_class(&self, row: &[f64]) -> usize {
        match self.leaf_for(row).0 {
            Node::Leaf { predicted_class, .. } => *predicted_class,
            Node::Internal { .. } => unreachable!(),
        }
    }

    pub fn leaves(&self) -> Vec<&Node> {
        let mut out = Vec::new();
        self.root.for_each_leaf(&mut |n| out.push(n));
        out
    }

    pub fn num_nodes(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Internal { children, .. } => 1 + children.iter().flatten().map(count).sum::<usize>(),
            }
        }
        count(&self.root)
    }

    pub fn max_leaf_depth(&self) -> usize {
        self.leaves().iter().map(|l| l.depth()).max().unwrap_or(0)
    }

    /// `(epsilon, delta)` consumed, summed over the ledger.
    pub fn budget_spent(&self) -> (f64, f64) {
        total_budget(&self.budget)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<DecisionTree> {
        let tree: DecisionTree = serde_json::from_str(s)?;
        tree.schema.validate()?;
        Ok(tree)
    }
}

/// Counts normalized to sum 1; uniform when the total is not positive.
pub fn normalize_counts(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / counts.len() as f64; counts.len()]
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Impurity of a class-count vector under `criterion` (entropy in nats).
pub fn impurity(criterion: SplitCriterion, counts: &[f64]) -> f64 {
    match criterion {
        SplitCriterion::InfoGain => entropy_of_counts(counts),
        SplitCriterion::GiniImpurity => {
            let total: f64 = counts.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
        }
    }
}

/// Class counts of each child when splitting `rows` on `feature`.
fn child_counts(data: &Dataset, rows: &[usize], feature: usize, arity: usize, classes: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; classes]; arity];
    for &i in rows {
        out[data.code(i, feature)][data.class(i)] += 1.0;
    }
    out
}

fn class_counts(data: &Dataset, rows: &[usize], classes: usize) -> Vec<f64> {
    let mut c = vec![0.0; classes];
    for &i in rows {
        c[data.class(i)] += 1.0;
    }
    c
}

/// Impurity decrease `C(A)` of splitting `parent` into `children`.
pub fn split_gain(criterion: SplitCriterion, parent: &[f64], children: &[Vec<f64>]) -> f64 {
    let n: f64 = parent.iter().sum();
    if n <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = children
        .iter()
        .map(|c| {
            let m: f64 = c.iter().sum();
            if m > 0.0 {
                m / n * impurity(criterion, c)
            } else {
                0.0
            }
        })
        .sum();
    impurity(criterion, parent) - weighted
}

fn cardinalities(schema: &FeatureSchema) -> Result<Vec<usize>> {
    schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Categorical { cardinality } => Ok(cardinality),
            FeatureKind::Continuous { .. } => Err(Error::InvalidArgument(format!(
                "trees need categorical features; '{}' is continuous",
                f.name
            ))),
        })
        .collect()
}

/// One candidate split at a node, as scored during induction.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScore {
    pub feature: usize,
    /// `C(A)`.
    pub gain: f64,
    /// Entropy of the whole tree's training predictions with this split applied.
    pub prediction_entropy: f64,
    /// `C(A) - lambda H(Y_A)`.
    pub score: f64,
}

struct Builder<'a> {
    data: &'a Dataset,
    config: &'a TreeConfig,
    arity: Vec<usize>,
    classes: usize,
    sensitive: usize,
    min_depth_for_sensitive: usize,
    /// Number of training rows the current tree predicts as each class.
    hist: Vec<f64>,
}

impl Builder<'_> {
    fn eligible(&self, feature: usize, depth: usize, used: &[bool]) -> bool {
        !used[feature] && !(feature == self.sensitive && depth < self.min_depth_for_sensitive)
    }

    fn candidate_scores(&self, rows: &[usize], depth: usize, used: &[bool]) -> Vec<SplitScore> {
        let parent = class_counts(self.data, rows, self.classes);
        let current = argmax_lowest(&parent);
        let n = rows.len() as f64;
        let mut out = Vec::new();
        for f in 0..self.arity.len() {
            if !self.eligible(f, depth, used) {
                continue;
            }
            let children = child_counts(self.data, rows, f, self.arity[f], self.classes);
            let gain = split_gain(self.config.criterion, &parent, &children);
            let mut hist = self.hist.clone();
            hist[current] -= n;
            for c in &children {
                let m: f64 = c.iter().sum();
                if m > 0.0 {
                    hist[argmax_lowest(c)] += m;
                }
            }
            let h = entropy_of_counts(&hist);
            out.push(SplitScore {
                feature: f,
                gain,
                prediction_entropy: h,
                score: gain - self.config.lambda * h,
            });
        }
        out
    }

    fn build(&mut self, rows: &[usize], depth: usize, used: &mut Vec<bool>) -> Node {
        let counts = class_counts(self.data, rows, self.classes);
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.config.max_depth || rows.len() < self.config.min_samples_split {
            return Node::leaf(counts, depth);
        }
        let scores = self.candidate_scores(rows, depth, used);
        let Some(best) = pick_best(&scores) else {
            return Node::leaf(counts, depth);
        };
        if self.config.early_stop {
            let stay = -self.config.lambda * entropy_of_counts(&self.hist);
            if best.score < stay - TIE_TOLERANCE {
                return Node::leaf(counts, depth);
            }
        }
        let feature = best.feature;
        // Commit: this node's rows now follow the children's majorities.
        let mut parts = vec![Vec::new(); self.arity[feature]];
        for &i in rows {
            parts[self.data.code(i, feature)].push(i);
        }
        self.hist[argmax_lowest(&counts)] -= rows.len() as f64;
        for p in &parts {
            if !p.is_empty() {
                let c = class_counts(self.data, p, self.classes);
                self.hist[argmax_lowest(&c)] += p.len() as f64;
            }
        }
        used[feature] = true;
        let children = parts
            .iter()
            .map(|p| {
                if p.is_empty() {
                    None
                } else {
                    Some(self.build(p, depth + 1, used))
                }
            })
            .collect();
        used[feature] = false;
        Node::Internal {
            feature_index: feature,
            depth,
            class_counts: counts,
            children,
        }
    }
}

fn pick_best(scores: &[SplitScore]) -> Option<&SplitScore> {
    let mut best: Option<&SplitScore> = None;
    for s in scores {
        if best.is_none_or(|b| s.score > b.score + TIE_TOLERANCE) {
            best = Some(s);
        }
    }
    best
}

fn check_inputs(train: &Dataset, config: &TreeConfig) -> Result<(usize, Vec<usize>)> {
    config.validate()?;
    let classes = train.require_classification()?;
    let arity = cardinalities(train.schema())?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    Ok((classes, arity))
}

fn grow(train: &Dataset, config: &TreeConfig, min_depth_for_sensitive: usize) -> Result<Node> {
    let (classes, arity) = check_inputs(train, config)?;
    let rows: Vec<usize> = (0..train.len()).collect();
    let root_counts = class_counts(train, &rows, classes);
    let mut hist = vec![0.0; classes];
    hist[argmax_lowest(&root_counts)] = train.len() as f64;
    let mut b = Builder {
        data: train,
        config,
        sensitive: train.schema().sensitive_index,
        arity,
        classes,
        min_depth_for_sensitive,
        hist,
    };
    let mut used = vec![false; b.arity.len()];
    Ok(b.build(&rows, 0, &mut used))
}

/// Greedy ID3 maximizing `C(A) - lambda H(Y_A)` at each node, depth first.
pub fn train_id3(train: &Dataset, config: &TreeConfig) -> Result<DecisionTree> {
    let root = grow(train, config, 0)?;
    Ok(DecisionTree {
        schema: train.schema().clone(),
        config: config.clone(),
        algorithm: TreeAlgorithm::Id3,
        root,
        budget: Vec::new(),
    })
}

/// ID3 in which the sensitive feature may only be split at depth
/// `>= min_depth_for_sensitive` (root is depth 0).
pub fn train_priority(train: &Dataset, config: &TreeConfig, min_depth_for_sensitive: usize) -> Result<DecisionTree> {
    let root = grow(train, config, min_depth_for_sensitive)?;
    Ok(DecisionTree {
        schema: train.schema().clone(),
        config: config.clone(),
        algorithm: TreeAlgorithm::Priority {
            min_depth_for_sensitive,
        },
        root,
        budget: Vec::new(),
    })
}

/// Scores of every candidate split at the root, in feature order.
pub fn root_split_scores(train: &Dataset, config: &TreeConfig) -> Result<Vec<SplitScore>> {
    let (classes, arity) = check_inputs(train, config)?;
    let rows: Vec<usize> = (0..train.len()).collect();
    let counts = class_counts(train, &rows, classes);
    let mut hist = vec![0.0; classes];
    hist[argmax_lowest(&counts)] = train.len() as f64;
    let b = Builder {
        data: train,
        config,
        sensitive: train.schema().sensitive_index,
        arity,
        classes,
        min_depth_for_sensitive: 0,
        hist,
    };
    let used = vec![false; b.arity.len()];
    Ok(b.candidate_scores(&rows, 0, &used))
}

// ---------------------------------------------------------------------------
// DP-ID3

/// Per-level budget `epsilon / (2 (max_depth + 1))`.
pub fn dp_level_epsilon(epsilon: f64, max_depth: usize) -> f64 {
    epsilon / (2.0 * (max_depth as f64 + 1.0))
}

/// Exponential-mechanism quality of a split: `sum_j sum_c n_jc ln(n_jc / n_j)`,
/// i.e. minus the count-weighted conditional entropy (nats).
pub fn dp_split_quality(children: &[Vec<f64>]) -> f64 {
    let mut q = 0.0;
    for c in children {
        let n: f64 = c.iter().sum();
        for &k in c {
            if k > 0.0 {
                q += k * (k / n).ln();
            }
        }
    }
    q
}

/// Sensitivity of [`dp_split_quality`] for datasets of at most `n` rows.
pub fn dp_split_sensitivity(n: usize) -> f64 {
    (n as f64 + 1.0).ln() + 1.0
}

/// Selection probabilities `exp(eps q_i / (2 s)) / Z`.
pub fn exponential_mechanism_probabilities(qualities: &[f64], epsilon: f64, sensitivity: f64) -> Vec<f64> {
    let logits: Vec<f64> = qualities.iter().map(|q| epsilon * q / (2.0 * sensitivity)).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Root-split selection probabilities of [`train_dp_id3`], indexed like
/// the schema's features.
pub fn dp_root_split_probabilities(train: &Dataset, epsilon: f64, config: &TreeConfig) -> Result<Vec<f64>> {
    let (classes, arity) = check_inputs(train, config)?;
    let rows: Vec<usize> = (0..train.len()).collect();
    let q: Vec<f64> = (0..arity.len())
        .map(|f| dp_split_quality(&child_counts(train, &rows, f, arity[f], classes)))
        .collect();
    Ok(exponential_mechanism_probabilities(
        &q,
        dp_level_epsilon(epsilon, config.max_depth),
        dp_split_sensitivity(train.len()),
    ))
}

fn sample_index(rng: &mut impl rand::Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct DpBuilder<'a> {
    data: &'a Dataset,
    config: &'a TreeConfig,
    arity: Vec<usize>,
    classes: usize,
    level_eps: f64,
    sensitivity: f64,
    rng: crate::seed::Rng,
    /// Deepest level at which a split was selected, and whether any leaf was noised.
    split_levels: Vec<bool>,
    any_leaf: bool,
}

impl DpBuilder<'_> {
    fn build(&mut self, rows: &[usize], depth: usize, used: &mut Vec<bool>) -> Node {
        let free: Vec<usize> = (0..self.arity.len()).filter(|&f| !used[f]).collect();
        if depth >= self.config.max_depth || free.is_empty() {
            self.any_leaf = true;
            let scale = 1.0 / self.level_eps;
            let counts = class_counts(self.data, rows, self.classes)
                .into_iter()
                .map(|c| (c + sample_laplace(&mut self.rng, scale)).max(0.0))
                .collect();
            return Node::leaf(counts, depth);
        }
        let q: Vec<f64> = free
            .iter()
            .map(|&f| dp_split_quality(&child_counts(self.data, rows, f, self.arity[f], self.classes)))
            .collect();
        let probs = exponential_mechanism_probabilities(&q, self.level_eps, self.sensitivity);
        let feature = free[sample_index(&mut self.rng, &probs)];
        self.split_levels[depth] = true;
        let mut parts = vec![Vec::new(); self.arity[feature]];
        for &i in rows {
            parts[self.data.code(i, feature)].push(i);
        }
        used[feature] = true;
        let children: Vec<Option<Node>> = parts.iter().map(|p| Some(self.build(p, depth + 1, used))).collect();
        used[feature] = false;
        // Internal counts are the sum of the (noisy) leaf counts below, so no
        // exact count is published.
        let mut counts = vec![0.0; self.classes];
        for c in children.iter().flatten() {
            for (a, b) in counts.iter_mut().zip(c.class_counts()) {
                *a += b;
            }
        }
        Node::Internal {
            feature_index: feature,
            depth,
            class_counts: counts,
            children,
        }
    }
}

/// Differentially private ID3.
///
/// Each level gets `eps' = epsilon / (2 (max_depth + 1))`. Splits are drawn by
/// the exponential mechanism over [`dp_split_quality`]; leaves publish class
/// counts plus Laplace(1/eps') noise, floored at 0. Nodes at the same level
/// hold disjoint rows, so each root-to-leaf path pays `eps'` per split level
/// plus `eps'` for its leaf. Trees grow to `max_depth` or until features run
/// out; data-dependent stopping rules are not applied.
pub fn train_dp_id3(train: &Dataset, epsilon: f64, config: &TreeConfig, seed: Seed) -> Result<DecisionTree> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    let (classes, arity) = check_inputs(train, config)?;
    let level_eps = dp_level_epsilon(epsilon, config.max_depth);
    let mut b = DpBuilder {
        data: train,
        config,
        arity,
        classes,
        level_eps,
        sensitivity: dp_split_sensitivity(train.len()),
        rng: seed.rng(),
        split_levels: vec![false; config.max_depth],
        any_leaf: false,
    };
    let rows: Vec<usize> = (0..train.len()).collect();
    let mut used = vec![false; b.arity.len()];
    let root = b.build(&rows, 0, &mut used);
    let mut budget: Vec<BudgetEntry> = b
        .split_levels
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(d, _)| BudgetEntry::new(format!("split selection, depth {d}"), level_eps, 0.0))
        .collect();
    if b.any_leaf {
        budget.push(BudgetEntry::new("leaf class counts", level_eps, 0.0));
    }
    Ok(DecisionTree {
        schema: train.schema().clone(),
        config: config.clone(),
        algorithm: TreeAlgorithm::DpId3 { epsilon },
        root,
        budget,
    })
}

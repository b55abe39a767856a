//! Random-forest classifier over feature vectors, with grid search and a
//! stored operating threshold.
//!
//! Trees split on `x[feature] <= threshold` (left) using Gini impurity over a
//! bootstrap sample, considering a random subset of `max_features` features at
//! each node. Split scores are compared with exact integer arithmetic so ties
//! resolve deterministically: lowest feature index, then lowest threshold.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_FOLDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TernaryLabel {
    None = 0,
    Low = 1,
    High = 2,
}

impl TryFrom<u8> for TernaryLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(TernaryLabel::None),
            1 => Ok(TernaryLabel::Low),
            2 => Ok(TernaryLabel::High),
            other => Err(format!("label must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<TernaryLabel> for u8 {
    fn from(l: TernaryLabel) -> u8 {
        l as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BinaryLabel {
    Negative = 0,
    Positive = 1,
}

impl BinaryLabel {
    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Positive
    }
}

impl From<bool> for BinaryLabel {
    fn from(b: bool) -> Self {
        if b {
            BinaryLabel::Positive
        } else {
            BinaryLabel::Negative
        }
    }
}

impl TryFrom<u8> for BinaryLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(BinaryLabel::Negative),
            1 => Ok(BinaryLabel::Positive),
            other => Err(format!("binary label must be 0 or 1, got {other}")),
        }
    }
}

impl From<BinaryLabel> for u8 {
    fn from(l: BinaryLabel) -> u8 {
        l as u8
    }
}

/// None and Low are both treated as negative; only High is positive.
pub fn collapse_label(t: TernaryLabel) -> BinaryLabel {
    BinaryLabel::from(t == TernaryLabel::High)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub max_features: usize,
    pub seed: u64,
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParams("max_depth must be positive".into()));
        }
        if !(1..=N_FEATURES).contains(&self.max_features) {
            return Err(Error::InvalidParams(format!(
                "max_features must be in 1..={N_FEATURES}, got {}",
                self.max_features
            )));
        }
        Ok(())
    }
}

/// Axis values for a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub max_features: Vec<usize>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            n_trees: vec![50, 100, 200],
            max_depth: vec![Some(3), Some(5), Some(8), None],
            max_features: vec![2, 3, 6],
        }
    }
}

impl ParamGrid {
    pub fn points(&self, seed: u64) -> Vec<ForestHyperparams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &max_features in &self.max_features {
                    out.push(ForestHyperparams {
                        n_trees,
                        max_depth,
                        max_features,
                        seed,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root; children always have larger indices than their parent.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { leaf } => return leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    fn validate(&self, t: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(format!("tree {t}: {msg}")));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { leaf } if !(0.0..=1.0).contains(&leaf) => {
                    return bad(format!("node {i}: leaf fraction {leaf} outside [0, 1]"))
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= N_FEATURES {
                        return bad(format!("node {i}: feature index {feature}"));
                    }
                    if !threshold.is_finite() {
                        return bad(format!("node {i}: non-finite threshold"));
                    }
                    let n = self.nodes.len();
                    if left <= i || right <= i || left >= n || right >= n {
                        return bad(format!("node {i}: bad child index"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub hyperparams: ForestHyperparams,
    pub threshold: f64,
    pub feature_names: Vec<String>,
    pub registry_version: String,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidParams(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.feature_names != FEATURE_NAMES {
            return Err(Error::InvalidParams(format!(
                "feature_names must be {FEATURE_NAMES:?}"
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::InvalidParams("model has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(t)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: ForestModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Content hash of the serialized model.
    pub fn model_id(&self) -> String {
        let json = self.to_json().expect("model serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn predict_proba(model: &ForestModel, x: &FeatureVector) -> f64 {
    let x = x.to_array();
    let sum: f64 = model.trees.iter().map(|t| t.leaf_value(&x)).sum();
    sum / model.trees.len() as f64
}

/// Positive iff the probability reaches `threshold` (or the model's own threshold).
pub fn classify(model: &ForestModel, x: &FeatureVector, threshold: Option<f64>) -> BinaryLabel {
    let t = threshold.unwrap_or(model.threshold);
    BinaryLabel::from(predict_proba(model, x) >= t)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tree_index as u64)))
}

/// Bootstrap sample drawn for tree `tree_index` of a forest seeded with `seed`.
pub fn bootstrap_indices(seed: u64, tree_index: usize, n: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree_index);
    draw_bootstrap(&mut rng, n)
}

fn draw_bootstrap(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

struct TreeBuilder<'a> {
    x: &'a [[f64; N_FEATURES]],
    y: &'a [BinaryLabel],
    max_depth: Option<usize>,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

/// Sum of squared class counts over the child size: larger is purer.
/// Represented as a fraction to compare exactly.
#[derive(Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(left_pos: u64, left_n: u64, right_pos: u64, right_n: u64) -> Self {
        let sq = |p: u64, n: u64| (p as u128).pow(2) + ((n - p) as u128).pow(2);
        SplitScore {
            num: sq(left_pos, left_n) * right_n as u128 + sq(right_pos, right_n) * left_n as u128,
            den: left_n as u128 * right_n as u128,
        }
    }

    fn better_than(&self, other: &SplitScore) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Best split of `samples` on `feature`: (threshold, score), lowest threshold on ties.
fn best_split_on_feature(
    x: &[[f64; N_FEATURES]],
    y: &[BinaryLabel],
    samples: &[usize],
    feature: usize,
) -> Option<(f64, SplitScore)> {
    let mut vals: Vec<(f64, bool)> = samples
        .iter()
        .map(|&i| (x[i][feature], y[i].is_positive()))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = vals.len() as u64;
    let total_pos = vals.iter().filter(|v| v.1).count() as u64;
    let mut best: Option<(f64, SplitScore)> = None;
    let mut left_pos = 0u64;
    for k in 0..vals.len() - 1 {
        left_pos += u64::from(vals[k].1);
        if vals[k].0 == vals[k + 1].0 {
            continue;
        }
        let left_n = k as u64 + 1;
        let score = SplitScore::new(left_pos, left_n, total_pos - left_pos, n - left_n);
        if best.as_ref().is_none_or(|(_, b)| score.better_than(b)) {
            let threshold = vals[k].0 + (vals[k + 1].0 - vals[k].0) / 2.0;
            best = Some((threshold, score));
        }
    }
    best
}

impl TreeBuilder<'_> {
    fn grow(&mut self, samples: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.y[i].is_positive()).count();
        self.nodes.push(Node::Leaf {
            leaf: pos as f64 / n as f64,
        });
        if pos == 0 || pos == n || self.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }

        let mut features = sample(&mut self.rng, N_FEATURES, self.max_features).into_vec();
        features.sort_unstable();
        let mut best: Option<(usize, f64, SplitScore)> = None;
        for &f in &features {
            if let Some((thr, score)) = best_split_on_feature(self.x, self.y, samples, f) {
                if best.as_ref().is_none_or(|(_, _, b)| score.better_than(b)) {
                    best = Some((f, thr, score));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            return id;
        };

        let (left_s, right_s): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(&left_s, depth + 1);
        let right = self.grow(&right_s, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(
    x: &[[f64; N_FEATURES]],
    y: &[BinaryLabel],
    hp: &ForestHyperparams,
    tree_index: usize,
) -> Tree {
    let mut rng = tree_rng(hp.seed, tree_index);
    let samples = draw_bootstrap(&mut rng, x.len());
    let mut builder = TreeBuilder {
        x,
        y,
        max_depth: hp.max_depth,
        max_features: hp.max_features,
        rng,
        nodes: Vec::new(),
    };
    builder.grow(&samples, 0);
    Tree {
        nodes: builder.nodes,
    }
}

/// Fit `hp.n_trees` bagged trees; per-tree seeds derive from `hp.seed` so the
/// result does not depend on thread scheduling.
pub fn fit_forest(
    x: &[[f64; N_FEATURES]],
    y: &[BinaryLabel],
    hp: &ForestHyperparams,
) -> Result<Vec<Tree>> {
    hp.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Training(format!(
            "{} feature rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    Ok((0..hp.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(x, y, hp, t))
        .collect())
}

/// Assign sample indices to `folds` folds, keeping class proportions.
pub fn stratified_folds(y: &[BinaryLabel], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut slot = 0;
    for class in [BinaryLabel::Negative, BinaryLabel::Positive] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        // Fisher-Yates with our own generator keeps folds stable across rand versions.
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        for i in idx {
            out[slot % folds].push(i);
            slot += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

fn f1_score(gold: &[BinaryLabel], pred: &[BinaryLabel]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (g, p) in gold.iter().zip(pred) {
        match (g.is_positive(), p.is_positive()) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold used when scoring held-out folds during grid search.
pub const CV_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub hyperparams: ForestHyperparams,
    pub cv_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ForestModel,
    pub cv_f1: f64,
    pub scores: Vec<GridScore>,
}

fn cross_validate(
    x: &[[f64; N_FEATURES]],
    y: &[BinaryLabel],
    folds: &[Vec<usize>],
    hp: &ForestHyperparams,
) -> Result<f64> {
    let mut total = 0.0;
    for held in folds {
        let mut is_held = vec![false; x.len()];
        for &i in held {
            is_held[i] = true;
        }
        let train_idx: Vec<usize> = (0..x.len()).filter(|&i| !is_held[i]).collect();
        let tx: Vec<_> = train_idx.iter().map(|&i| x[i]).collect();
        let ty: Vec<_> = train_idx.iter().map(|&i| y[i]).collect();
        let trees = fit_forest(&tx, &ty, hp)?;
        let gold: Vec<_> = held.iter().map(|&i| y[i]).collect();
        let pred: Vec<_> = held
            .iter()
            .map(|&i| {
                let p = trees.iter().map(|t| t.leaf_value(&x[i])).sum::<f64>() / trees.len() as f64;
                BinaryLabel::from(p >= CV_THRESHOLD)
            })
            .collect();
        total += f1_score(&gold, &pred);
    }
    Ok(total / folds.len() as f64)
}

fn depth_rank(d: Option<usize>) -> usize {
    d.unwrap_or(usize::MAX)
}

/// Grid search with stratified k-fold cross-validated F1, then refit of the
/// best grid point on all data. Ties prefer fewer trees, then shallower depth,
/// then fewer features. The returned model carries [`DEFAULT_THRESHOLD`] and an
/// empty registry version for the caller to fill in.
pub fn train(
    dataset: &[(FeatureVector, BinaryLabel)],
    grid: &[ForestHyperparams],
    folds: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    if grid.is_empty() {
        return Err(Error::Training("empty hyperparameter grid".into()));
    }
    if folds < 2 {
        return Err(Error::Training(format!("need at least 2 folds, got {folds}")));
    }
    let x: Vec<[f64; N_FEATURES]> = dataset.iter().map(|(f, _)| f.to_array()).collect();
    let y: Vec<BinaryLabel> = dataset.iter().map(|(_, l)| *l).collect();
    let pos = y.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Training(
            "dataset must contain both positive and negative examples".into(),
        ));
    }
    for hp in grid {
        hp.validate()?;
    }
    if y.len() < folds {
        return Err(Error::Training(format!(
            "{} examples cannot fill {folds} folds",
            y.len()
        )));
    }

    let fold_idx = stratified_folds(&y, folds, seed);
    let scores: Vec<GridScore> = grid
        .par_iter()
        .map(|hp| {
            cross_validate(&x, &y, &fold_idx, hp).map(|cv_f1| GridScore {
                hyperparams: *hp,
                cv_f1,
            })
        })
        .collect::<Result<_>>()?;

    let best = scores
        .iter()
        .min_by(|a, b| {
            b.cv_f1
                .total_cmp(&a.cv_f1)
                .then(a.hyperparams.n_trees.cmp(&b.hyperparams.n_trees))
                .then(depth_rank(a.hyperparams.max_depth).cmp(&depth_rank(b.hyperparams.max_depth)))
                .then(a.hyperparams.max_features.cmp(&b.hyperparams.max_features))
        })
        .expect("grid is non-empty");

    let hyperparams = best.hyperparams;
    let trees = fit_forest(&x, &y, &hyperparams)?;
    Ok(TrainOutcome {
        model: ForestModel {
            hyperparams,
            threshold: DEFAULT_THRESHOLD,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            registry_version: String::new(),
            trees,
        },
        cv_f1: best.cv_f1,
        scores,
    })
}

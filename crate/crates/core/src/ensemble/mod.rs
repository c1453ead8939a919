//! Binary tree-ensemble classifiers: random forest, extra trees and
//! gradient-boosted trees. Class 1 is agitation throughout.

mod boost;
pub mod tree;

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::modelfile::{self, ModelFileError, ModelKind};
use crate::seed;
pub use tree::{DecisionTree, Node};

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("gini of an empty node")]
    EmptyNode,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("labels must be 0 or 1")]
    InvalidLabel,
    #[error("training data contains non-finite values")]
    NonFiniteInput,
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("invalid hyperparameters: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// `1 - sum (c_i / N)^2`.
pub fn gini(counts: &[f64]) -> Result<f64, EnsembleError> {
    let n: f64 = counts.iter().sum();
    if n <= 0.0 {
        return Err(EnsembleError::EmptyNode);
    }
    Ok(1.0 - counts.iter().map(|c| (c / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(alias = "et")]
    ExtraTrees,
    Boosted,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [Self::RandomForest, Self::ExtraTrees, Self::Boosted];

    pub fn short_name(self) -> &'static str {
        match self {
            Self::RandomForest => "rf",
            Self::ExtraTrees => "et",
            Self::Boosted => "boosted",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::RandomForest => "Random Forest",
            Self::ExtraTrees => "Extra Trees",
            Self::Boosted => "Boosted Trees",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.short_name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestMode {
    RandomForest,
    ExtraTrees,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub min_samples_split: usize,
    /// Forest depth limit; `None` grows until pure.
    pub forest_max_depth: Option<usize>,
    pub n_rounds: usize,
    pub boost_max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub min_child_weight: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_split: 2,
            forest_max_depth: None,
            n_rounds: 100,
            boost_max_depth: 6,
            learning_rate: 0.3,
            l2_lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: &str| Err(EnsembleError::InvalidConfig(m.into()));
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2");
        }
        if self.boost_max_depth == 0 {
            return bad("boost_max_depth must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.l2_lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("learning_rate must be positive; l2_lambda and min_child_weight non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub mode: ForestMode,
    pub n_trees: usize,
    pub feature_subsample: String,
    pub n_features: usize,
    pub seed: u64,
    /// Set when every training row had this class.
    pub single_class: Option<u8>,
    pub trees: Vec<DecisionTree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub max_depth: usize,
    pub l2_lambda: f64,
    pub min_child_weight: f64,
    pub n_features: usize,
    pub single_class: Option<u8>,
    pub trees: Vec<DecisionTree>,
}

/// Probability clamp keeping boosted outputs strictly inside (0, 1).
const PROB_FLOOR: f64 = 1e-15;
/// Positive rate clamp for the prior log-odds.
const PRIOR_CLAMP: f64 = 1e-6;

fn sigmoid(m: f64) -> f64 {
    (1.0 / (1.0 + (-m).exp())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

impl BoostedModel {
    /// Margin using only the first `rounds` trees.
    pub fn margin(&self, row: &[f64], rounds: usize) -> f64 {
        self.base_score + self.learning_rate * self.trees[..rounds.min(self.trees.len())].iter().map(|t| t.value(row)).sum::<f64>()
    }

    pub fn positive_proba(&self, row: &[f64], rounds: usize) -> f64 {
        sigmoid(self.margin(row, rounds))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Boosted(BoostedModel),
}

fn check_training(x: ArrayView2<'_, f64>, y: &[u8]) -> Result<Option<u8>, EnsembleError> {
    if x.nrows() != y.len() {
        return Err(EnsembleError::ShapeMismatch(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(EnsembleError::EmptyTrainingSet);
    }
    if y.iter().any(|&c| c > 1) {
        return Err(EnsembleError::InvalidLabel);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFiniteInput);
    }
    let single = if y.iter().all(|&c| c == y[0]) { Some(y[0]) } else { None };
    if let Some(c) = single {
        log::warn!("single-class training set (class {c}); model predicts it with certainty");
    }
    Ok(single)
}

fn columns(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.columns().into_iter().map(|c| c.to_vec()).collect()
}

pub fn fit_forest(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    mode: ForestMode,
    hp: &Hyperparams,
    seed: u64,
) -> Result<ForestModel, EnsembleError> {
    hp.validate()?;
    let single_class = check_training(x, y)?;
    let (n, d) = x.dim();
    let cols = columns(x);
    let params = tree::GrowParams {
        mode,
        max_features: ((d as f64).sqrt() as usize).max(1),
        min_samples_split: hp.min_samples_split,
        max_depth: hp.forest_max_depth,
    };
    let trees = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            use rand::Rng;
            let mut rng = seed::rng(seed::derive(seed, t as u64));
            let rows = match mode {
                ForestMode::RandomForest => (0..n).map(|_| rng.random_range(0..n)).collect(),
                ForestMode::ExtraTrees => (0..n).collect(),
            };
            tree::grow_classifier(&cols, y, rows, &params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        mode,
        n_trees: hp.n_trees,
        feature_subsample: "sqrt".into(),
        n_features: d,
        seed,
        single_class,
        trees,
    })
}

pub fn fit_boosted(x: ArrayView2<'_, f64>, y: &[u8], hp: &Hyperparams) -> Result<BoostedModel, EnsembleError> {
    hp.validate()?;
    let single_class = check_training(x, y)?;
    let (n, d) = x.dim();
    let rate = (y.iter().map(|&c| c as f64).sum::<f64>() / n as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (rate / (1.0 - rate)).ln();
    let mut model = BoostedModel {
        base_score,
        learning_rate: hp.learning_rate,
        n_rounds: hp.n_rounds,
        max_depth: hp.boost_max_depth,
        l2_lambda: hp.l2_lambda,
        min_child_weight: hp.min_child_weight,
        n_features: d,
        single_class,
        trees: Vec::new(),
    };
    if single_class.is_some() {
        return Ok(model);
    }
    let cols = columns(x);
    let sorted: Vec<Vec<usize>> = cols
        .par_iter()
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
            idx
        })
        .collect();
    let params = boost::BoostParams {
        max_depth: hp.boost_max_depth,
        lambda: hp.l2_lambda,
        min_child_weight: hp.min_child_weight,
    };
    let x = x.as_standard_layout();
    let mut margin = vec![base_score; n];
    let (mut grad, mut hess) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..hp.n_rounds {
        for i in 0..n {
            let p = 1.0 / (1.0 + (-margin[i]).exp());
            grad[i] = p - y[i] as f64;
            hess[i] = p * (1.0 - p);
        }
        let tree = boost::grow_regression(&cols, &sorted, &grad, &hess, &params);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += hp.learning_rate * tree.value(x.row(i).as_slice().unwrap());
        }
        model.trees.push(tree);
    }
    Ok(model)
}

impl Model {
    pub fn fit(kind: ClassifierKind, x: ArrayView2<'_, f64>, y: &[u8], hp: &Hyperparams, seed: u64) -> Result<Self, EnsembleError> {
        Ok(match kind {
            ClassifierKind::RandomForest => Model::Forest(fit_forest(x, y, ForestMode::RandomForest, hp, seed)?),
            ClassifierKind::ExtraTrees => Model::Forest(fit_forest(x, y, ForestMode::ExtraTrees, hp, seed)?),
            ClassifierKind::Boosted => Model::Boosted(fit_boosted(x, y, hp)?),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Forest(f) if f.mode == ForestMode::RandomForest => ClassifierKind::RandomForest,
            Model::Forest(_) => ClassifierKind::ExtraTrees,
            Model::Boosted(_) => ClassifierKind::Boosted,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Forest(f) => f.n_features,
            Model::Boosted(b) => b.n_features,
        }
    }

    /// `(p_normal, p_agitation)` for one row.
    pub fn proba_row(&self, row: &[f64]) -> [f64; 2] {
        match self {
            Model::Forest(f) => {
                if let Some(c) = f.single_class {
                    let mut p = [0.0; 2];
                    p[c as usize] = 1.0;
                    return p;
                }
                let mut acc = [0.0; 2];
                for t in &f.trees {
                    let p = t.class_proba(row);
                    acc[0] += p[0];
                    acc[1] += p[1];
                }
                let k = f.trees.len() as f64;
                let pos = acc[1] / k;
                [1.0 - pos, pos]
            }
            Model::Boosted(b) => {
                let pos = b.positive_proba(row, b.trees.len());
                [1.0 - pos, pos]
            }
        }
    }

    /// Rows are scored independently and in parallel; output is `n x 2`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, EnsembleError> {
        if x.ncols() != self.n_features() {
            return Err(EnsembleError::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.n_features(),
                x.ncols()
            )));
        }
        let x = x.as_standard_layout();
        let rows: Vec<[f64; 2]> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.proba_row(x.row(i).as_slice().unwrap()))
            .collect();
        Ok(Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]))
    }

    /// Hard predictions at probability 0.5 (ties go to normal).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<u8>, EnsembleError> {
        Ok(self.predict_proba(x)?.rows().into_iter().map(|p| u8::from(p[1] > 0.5)).collect())
    }

    pub fn to_json(&self) -> String {
        match self {
            Model::Forest(f) => modelfile::to_string(ModelKind::Forest, f),
            Model::Boosted(b) => modelfile::to_string(ModelKind::Boosted, b),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EnsembleError> {
        let model = match modelfile::kind_of(text)? {
            ModelKind::Forest => Model::Forest(modelfile::from_str(text, ModelKind::Forest)?),
            ModelKind::Boosted => Model::Boosted(modelfile::from_str(text, ModelKind::Boosted)?),
            found => {
                return Err(ModelFileError::WrongKind { expected: vec![ModelKind::Forest, ModelKind::Boosted], found }.into())
            }
        };
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<(), ModelFileError> {
        let (trees, d) = match self {
            Model::Forest(f) => (&f.trees, f.n_features),
            Model::Boosted(b) => (&b.trees, b.n_features),
        };
        for t in trees {
            let n = t.nodes.len();
            for node in &t.nodes {
                if let Node::Split { feature, left, right, .. } = node {
                    if *feature >= d || *left >= n || *right >= n {
                        return Err(ModelFileError::CorruptModel("tree node out of range".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EnsembleError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnsembleError> {
        Self::from_json(&modelfile::read(path)?)
    }
}

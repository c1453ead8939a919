//! Stratified splitting and imbalance-aware scoring. Agitation (class 1) is
//! the positive class.

mod experiment;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleError;
use crate::seed;
use crate::selftrain::SelfTrainError;

pub use experiment::{
    configuration_title, markdown_table, run_experiment, EvalReport, ExperimentOutput, ExperimentSpec, LabelSummary, Mode,
    Representation,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("class {class} has {count} rows; at least 2 are needed to split")]
    ClassTooSmall { class: u8, count: usize },
    #[error("class rate undefined: no {0} rows")]
    UndefinedClassRate(&'static str),
    #[error("scores cover a single class")]
    SingleClassScores,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    SelfTrain(#[from] SelfTrainError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub stratified: bool,
    /// Hold out whole participants instead of windows.
    pub subject_level: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.3, stratified: true, subject_level: false, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EvalError::InvalidSplit(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        Ok(())
    }
}

/// Per class, `round(count * test_fraction)` seeded-random rows go to test.
/// Both index lists are sorted.
pub fn stratified_split(labels: &[u8], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive_named(spec.seed, "split"));
    let mut train = Vec::new();
    let mut test = Vec::new();
    if !spec.stratified {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        all.shuffle(&mut rng);
        let k = (labels.len() as f64 * spec.test_fraction).round() as usize;
        test.extend_from_slice(&all[..k]);
        train.extend_from_slice(&all[k..]);
    } else {
        for class in [0u8, 1] {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            if idx.len() < 2 {
                return Err(EvalError::ClassTooSmall { class, count: idx.len() });
            }
            idx.shuffle(&mut rng);
            let k = (idx.len() as f64 * spec.test_fraction).round() as usize;
            test.extend_from_slice(&idx[..k]);
            train.extend_from_slice(&idx[k..]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Hold out whole groups until the test side reaches `test_fraction` of
/// the rows. Groups are visited in seeded order.
pub fn group_split(groups: &[String], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    spec.validate()?;
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    if by_group.len() < 2 {
        return Err(EvalError::InvalidSplit("subject-level split needs at least two participants".into()));
    }
    let mut order: Vec<&str> = by_group.keys().copied().collect();
    order.shuffle(&mut seed::rng(seed::derive_named(spec.seed, "group-split")));
    let target = (groups.len() as f64 * spec.test_fraction).round() as usize;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, g) in order.iter().enumerate() {
        let rows = &by_group[g];
        // Always leave at least one group for training.
        if test.len() < target && k + 1 < order.len() {
            test.extend_from_slice(rows);
        } else {
            train.extend_from_slice(rows);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[u8], predicted: &[u8]) -> Result<Self, EvalError> {
        if truth.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(format!("{} labels, {} predictions", truth.len(), predicted.len())));
        }
        let mut cm = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => cm.tp += 1,
                (0, 1) => cm.fp += 1,
                (0, 0) => cm.tn += 1,
                _ => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same matrix with normal treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }
}

/// `(TPR + TNR) / 2`.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.tp + cm.fn_ == 0 {
        return Err(EvalError::UndefinedClassRate("positive"));
    }
    if cm.tn + cm.fp == 0 {
        return Err(EvalError::UndefinedClassRate("negative"));
    }
    let tpr = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    let tnr = cm.tn as f64 / (cm.tn + cm.fp) as f64;
    Ok((tpr + tnr) / 2.0)
}

/// Index 0 is normal, index 1 agitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub support: [usize; 2],
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Set when some 0/0 ratio was reported as 0.
    pub zero_division: bool,
}

pub fn prf_scores(cm: &ConfusionMatrix) -> PrfScores {
    let mut zero_division = false;
    let mut ratio = |a: usize, b: usize| {
        if b == 0 {
            zero_division = true;
            0.0
        } else {
            a as f64 / b as f64
        }
    };
    // (tp, fp, fn) from each class's point of view.
    let views = [(cm.tn, cm.fn_, cm.fp), (cm.tp, cm.fp, cm.fn_)];
    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    let mut support = [0usize; 2];
    for (c, &(tp, fp, fn_)) in views.iter().enumerate() {
        precision[c] = ratio(tp, tp + fp);
        recall[c] = ratio(tp, tp + fn_);
        support[c] = tp + fn_;
    }
    let mut f1 = [0.0; 2];
    for c in 0..2 {
        let s = precision[c] + recall[c];
        f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
    }
    let total = (support[0] + support[1]) as f64;
    let weighted = |v: [f64; 2]| {
        if total > 0.0 {
            (v[0] * support[0] as f64 + v[1] * support[1] as f64) / total
        } else {
            0.0
        }
    };
    PrfScores {
        precision,
        recall,
        f1,
        support,
        weighted_precision: weighted(precision),
        weighted_recall: weighted(recall),
        weighted_f1: weighted(f1),
        zero_division,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,x,y\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.threshold, p.x, p.y));
    }
    s
}

/// Cumulative (tp, fp) after each group of equal scores, highest first.
fn sweep(scores: &[f64], labels: &[u8]) -> Result<(Vec<(f64, usize, usize)>, usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassScores);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, tp, fp));
    }
    Ok((steps, pos, neg))
}

/// ROC curve over the distinct scores and its trapezoidal area. Equal
/// scores form one step, which scores ties as one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<CurvePoint>), EvalError> {
    let (steps, pos, neg) = sweep(scores, labels)?;
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 0.0 }];
    let mut auc = 0.0;
    for (s, tp, fp) in steps {
        let p = CurvePoint { threshold: s, x: fp as f64 / neg as f64, y: tp as f64 / pos as f64 };
        let last = points[points.len() - 1];
        auc += (p.x - last.x) * (p.y + last.y) / 2.0;
        points.push(p);
    }
    Ok((auc, points))
}

/// Precision-recall curve (x = recall, y = precision) and the step-wise
/// area `sum (R_k - R_{k-1}) P_k`.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<CurvePoint>), EvalError> {
    let (steps, pos, _) = sweep(scores, labels)?;
    let mut points = vec![CurvePoint { threshold: f64::INFINITY, x: 0.0, y: 1.0 }];
    let mut area = 0.0;
    for (s, tp, fp) in steps {
        let p = CurvePoint { threshold: s, x: tp as f64 / pos as f64, y: tp as f64 / (tp + fp) as f64 };
        area += (p.x - points[points.len() - 1].x) * p.y;
        points.push(p);
    }
    Ok((area, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let labels: Vec<u8> = [vec![0; 100], vec![1; 10]].concat();
        let (train, test) = stratified_split(&labels, &SplitSpec::default()).unwrap();
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 30);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 3);
        assert_eq!(train.len() + test.len(), 110);
        assert!(matches!(stratified_split(&[0, 0, 1], &SplitSpec::default()), Err(EvalError::ClassTooSmall { class: 1, count: 1 })));
    }

    #[test]
    fn group_split_keeps_groups_whole() {
        let groups: Vec<String> = (0..50).map(|i| format!("P{}", i % 5)).collect();
        let (train, test) = group_split(&groups, &SplitSpec::default()).unwrap();
        for t in &test {
            assert!(train.iter().all(|r| groups[*r] != groups[*t]));
        }
        assert_eq!(train.len() + test.len(), 50);
    }

    #[test]
    fn balanced_accuracy_examples() {
        let cm = ConfusionMatrix { tp: 5, fp: 0, tn: 7, fn_: 0 };
        assert_eq!(balanced_accuracy(&cm).unwrap(), 1.0);
        let cm = ConfusionMatrix { tp: 8, fp: 4, tn: 6, fn_: 2 };
        assert!((balanced_accuracy(&cm).unwrap() - 0.7).abs() < 1e-15);
        let cm = ConfusionMatrix { tp: 0, fp: 0, tn: 90, fn_: 10 };
        assert_eq!(balanced_accuracy(&cm).unwrap(), 0.5);
        assert!(balanced_accuracy(&ConfusionMatrix { tp: 0, fp: 3, tn: 1, fn_: 0 }).is_err());
        assert_eq!(balanced_accuracy(&cm).unwrap(), balanced_accuracy(&cm.swapped()).unwrap());
    }

    #[test]
    fn prf_example() {
        let s = prf_scores(&ConfusionMatrix { tp: 8, fp: 2, tn: 85, fn_: 5 });
        assert!((s.precision[1] - 0.8).abs() < 1e-12);
        assert!((s.recall[1] - 8.0 / 13.0).abs() < 1e-12);
        assert!((s.f1[1] - 0.6956521739130435).abs() < 1e-12);
        let perfect = prf_scores(&ConfusionMatrix { tp: 4, fp: 0, tn: 4, fn_: 0 });
        assert_eq!((perfect.weighted_precision, perfect.weighted_recall, perfect.weighted_f1), (1.0, 1.0, 1.0));
        assert!(prf_scores(&ConfusionMatrix { tp: 0, fp: 0, tn: 4, fn_: 2 }).zero_division);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.0, 1.0, 1.0, 0.0], &[0, 1, 1, 0]).unwrap().0, 1.0);
        assert_eq!(roc_auc(&[0.2, 0.9], &[1, 0]).unwrap().0, 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap().0, 0.5);
        assert!(matches!(roc_auc(&[0.1], &[1]), Err(EvalError::SingleClassScores)));
        let (ap, pts) = pr_curve(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(pts.len(), 4);
    }
}

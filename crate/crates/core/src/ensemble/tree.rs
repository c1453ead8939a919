use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gini, ForestMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    ClassLeaf { counts: [f64; 2] },
    ValueLeaf { value: f64 },
}

/// Flat binary tree; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth_reached: usize,
}

impl DecisionTree {
    pub fn leaf_for(&self, row: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    /// Class frequencies at the reached leaf.
    pub fn class_proba(&self, row: &[f64]) -> [f64; 2] {
        match self.leaf_for(row) {
            Node::ClassLeaf { counts } => {
                let n = counts[0] + counts[1];
                [counts[0] / n, counts[1] / n]
            }
            _ => panic!("class_proba on a regression tree"),
        }
    }

    pub fn value(&self, row: &[f64]) -> f64 {
        match self.leaf_for(row) {
            Node::ValueLeaf { value } => *value,
            _ => panic!("value on a classification tree"),
        }
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                _ => None,
            })
            .max()
    }
}

pub(super) struct GrowParams {
    pub mode: ForestMode,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
}

/// Grow one Gini tree on `rows` (a multiset when bootstrapped).
/// `cols[f][r]` is feature `f` of row `r`.
pub(super) fn grow_classifier(
    cols: &[Vec<f64>],
    y: &[u8],
    rows: Vec<usize>,
    p: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let d = cols.len();
    let mut nodes = vec![Node::ClassLeaf { counts: [0.0; 2] }];
    let mut max_depth_reached = 0;
    let mut stack = vec![(0usize, rows, 0usize)];
    let mut features: Vec<usize> = (0..d).collect();
    while let Some((id, rows, depth)) = stack.pop() {
        max_depth_reached = max_depth_reached.max(depth);
        let mut counts = [0.0; 2];
        for &r in &rows {
            counts[y[r] as usize] += 1.0;
        }
        let pure = counts[0] == 0.0 || counts[1] == 0.0;
        let depth_capped = p.max_depth.is_some_and(|m| depth >= m);
        if pure || rows.len() < p.min_samples_split || depth_capped {
            nodes[id] = Node::ClassLeaf { counts };
            continue;
        }
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut visited = 0;
        for &f in &features {
            if visited >= p.max_features {
                break;
            }
            let candidate = match p.mode {
                ForestMode::RandomForest => best_midpoint_split(&cols[f], y, &rows, counts),
                ForestMode::ExtraTrees => random_split(&cols[f], y, &rows, counts, rng),
            };
            // Constant features do not count towards the subset size.
            let Some((score, threshold)) = candidate else { continue };
            visited += 1;
            if best.is_none_or(|(s, _, _)| score < s) {
                best = Some((score, f, threshold));
            }
        }
        let Some((_, feature, threshold)) = best else {
            nodes[id] = Node::ClassLeaf { counts };
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| cols[feature][r] <= threshold);
        let left = nodes.len();
        nodes.push(Node::ClassLeaf { counts: [0.0; 2] });
        nodes.push(Node::ClassLeaf { counts: [0.0; 2] });
        nodes[id] = Node::Split { feature, threshold, left, right: left + 1 };
        stack.push((left + 1, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    DecisionTree { nodes, max_depth_reached }
}

fn weighted_gini(left: [f64; 2], total: [f64; 2]) -> f64 {
    let right = [total[0] - left[0], total[1] - left[1]];
    let nl = left[0] + left[1];
    let nr = right[0] + right[1];
    nl * gini(&left).unwrap_or(0.0) + nr * gini(&right).unwrap_or(0.0)
}

/// Best exact split over midpoints of consecutive distinct values.
fn best_midpoint_split(col: &[f64], y: &[u8], rows: &[usize], total: [f64; 2]) -> Option<(f64, f64)> {
    let mut pairs: Vec<(f64, u8)> = rows.iter().map(|&r| (col[r], y[r])).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if pairs[0].0 == pairs[pairs.len() - 1].0 {
        return None;
    }
    let mut left = [0.0; 2];
    let mut best: Option<(f64, f64)> = None;
    for w in 0..pairs.len() - 1 {
        left[pairs[w].1 as usize] += 1.0;
        let (a, b) = (pairs[w].0, pairs[w + 1].0);
        if a == b {
            continue;
        }
        let score = weighted_gini(left, total);
        if best.is_none_or(|(s, _)| score < s) {
            let mid = a + (b - a) / 2.0;
            best = Some((score, if mid < b { mid } else { a }));
        }
    }
    best
}

/// One uniform threshold in `[min, max)` of the node's values.
fn random_split(col: &[f64], y: &[u8], rows: &[usize], total: [f64; 2], rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(col[r]), hi.max(col[r])));
    if lo >= hi {
        return None;
    }
    let t = rng.random_range(lo..hi);
    let mut left = [0.0; 2];
    for &r in rows {
        if col[r] <= t {
            left[y[r] as usize] += 1.0;
        }
    }
    Some((weighted_gini(left, total), t))
}

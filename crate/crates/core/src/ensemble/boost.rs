//! Level-wise exact greedy regression trees on gradient/hessian statistics.

use rayon::prelude::*;

use super::tree::{DecisionTree, Node};

pub(super) struct BoostParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

#[derive(Clone, Copy)]
struct Slot {
    node: usize,
    g: f64,
    h: f64,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

const INACTIVE: usize = usize::MAX;

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

struct Stats<'a> {
    grad: &'a [f64],
    hess: &'a [f64],
}

/// Best split per slot for one feature, scanning rows in value order.
fn scan_feature(
    f: usize,
    col: &[f64],
    order: &[usize],
    slot_of: &[usize],
    slots: &[Slot],
    stats: &Stats<'_>,
    p: &BoostParams,
) -> Vec<Option<Best>> {
    let n = slots.len();
    let (mut gl, mut hl, mut last) = (vec![0.0; n], vec![0.0; n], vec![f64::NAN; n]);
    let mut best: Vec<Option<Best>> = vec![None; n];
    for &r in order {
        let s = slot_of[r];
        if s == INACTIVE {
            continue;
        }
        let x = col[r];
        if !last[s].is_nan() && x != last[s] {
            let Slot { g, h, .. } = slots[s];
            let (gr, hr) = (g - gl[s], h - hl[s]);
            if hl[s] >= p.min_child_weight && hr >= p.min_child_weight {
                let gain = 0.5 * (score(gl[s], hl[s], p.lambda) + score(gr, hr, p.lambda) - score(g, h, p.lambda));
                if best[s].is_none_or(|b| gain > b.gain) {
                    let mid = last[s] + (x - last[s]) / 2.0;
                    let threshold = if mid < x { mid } else { last[s] };
                    best[s] = Some(Best { gain, feature: f, threshold });
                }
            }
        }
        gl[s] += stats.grad[r];
        hl[s] += stats.hess[r];
        last[s] = x;
    }
    best
}

/// Grow one tree; leaves hold `-G / (H + lambda)`.
///
/// `sorted[f]` lists the training rows in ascending order of feature `f`.
pub(super) fn grow_regression(
    cols: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    p: &BoostParams,
) -> DecisionTree {
    let n = grad.len();
    let stats = Stats { grad, hess };
    let leaf = |g: f64, h: f64| Node::ValueLeaf { value: -g / (h + p.lambda) };
    let mut nodes = vec![leaf(0.0, 0.0)];
    let mut slot_of = vec![0usize; n];
    let mut slots = vec![Slot { node: 0, g: grad.iter().sum(), h: hess.iter().sum() }];
    let mut max_depth_reached = 0;

    for depth in 0..p.max_depth {
        if slots.is_empty() {
            break;
        }
        max_depth_reached = depth;
        let per_feature: Vec<Vec<Option<Best>>> = (0..cols.len())
            .into_par_iter()
            .map(|f| scan_feature(f, &cols[f], &sorted[f], &slot_of, &slots, &stats, p))
            .collect();

        // Per slot: (left slot, right slot, best) if it splits.
        let mut next = Vec::new();
        let mut routes: Vec<Option<(usize, Best)>> = Vec::with_capacity(slots.len());
        for (s, slot) in slots.iter().enumerate() {
            let mut best: Option<Best> = None;
            for cand in per_feature.iter().filter_map(|v| v[s]) {
                if best.is_none_or(|b| cand.gain > b.gain) {
                    best = Some(cand);
                }
            }
            match best.filter(|b| b.gain > 0.0) {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(leaf(0.0, 0.0));
                    nodes.push(leaf(0.0, 0.0));
                    nodes[slot.node] = Node::Split { feature: b.feature, threshold: b.threshold, left, right: left + 1 };
                    routes.push(Some((next.len(), b)));
                    next.push(Slot { node: left, g: 0.0, h: 0.0 });
                    next.push(Slot { node: left + 1, g: 0.0, h: 0.0 });
                }
                None => {
                    nodes[slot.node] = leaf(slot.g, slot.h);
                    routes.push(None);
                }
            }
        }
        for r in 0..n {
            let s = slot_of[r];
            if s == INACTIVE {
                continue;
            }
            slot_of[r] = match routes[s] {
                Some((base, b)) => {
                    let child = if cols[b.feature][r] <= b.threshold { base } else { base + 1 };
                    next[child].g += grad[r];
                    next[child].h += hess[r];
                    child
                }
                None => INACTIVE,
            };
        }
        if !next.is_empty() {
            max_depth_reached = depth + 1;
        }
        slots = next;
    }
    for slot in &slots {
        nodes[slot.node] = leaf(slot.g, slot.h);
    }
    DecisionTree { nodes, max_depth_reached }
}

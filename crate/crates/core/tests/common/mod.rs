//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written from the definitions, loop by loop, without
//! calling into the library code it checks.

#![allow(dead_code)]

use std::collections::HashMap;

use agitation::ensemble::{ClassifierKind, Hyperparams, Model};
use agitation::eval::{self, SplitSpec};
use agitation::features::{FeatureMatrix, RowLabel, RowMeta};
use agitation::seed;
use agitation::selftrain::{self_train, SelfTrainConfig, Termination};
use agitation::vae::VaeParams;
use ndarray::Array2;
use ndarray::Axis;
use rand::Rng;
use rand_distr::StandardNormal;
use rand_distr::{Distribution, Normal};

// ---------------------------------------------------------------- statistics

fn percentile(x: &[f64], q: f64) -> f64 {
    // Insertion sort keeps this independent of the library's sort.
    let mut s = x.to_vec();
    for i in 1..s.len() {
        let mut j = i;
        while j > 0 && s[j - 1] > s[j] {
            s.swap(j - 1, j);
            j -= 1;
        }
    }
    let rank = q / 100.0 * (s.len() as f64 - 1.0);
    let below = rank.floor();
    let frac = rank - below;
    let i = below as usize;
    if frac == 0.0 {
        s[i]
    } else {
        s[i] * (1.0 - frac) + s[i + 1] * frac
    }
}

fn entropy_of_counts(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0.0 {
            h -= (c / n) * (c / n).ln();
        }
    }
    h
}

/// Singular values by one-sided (Hestenes) Jacobi: rotate column pairs
/// until all are orthogonal; the column norms are then the singular values.
/// Working on the matrix itself keeps small singular values accurate.
pub fn jacobi_singular_values(mut cols: Vec<Vec<f64>>) -> Vec<f64> {
    let n = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..cols[p].len() {
                    let a = cols[p][k];
                    let b = cols[q][k];
                    cols[p][k] = c * a - s * b;
                    cols[q][k] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    cols.iter().map(|c| dot(c, c).sqrt()).collect()
}

fn svd_entropy(x: &[f64]) -> f64 {
    let m = 10;
    let rows = x.len() - m + 1;
    let cols: Vec<Vec<f64>> = (0..m).map(|j| (0..rows).map(|r| x[r + j]).collect()).collect();
    entropy_of_counts(&jacobi_singular_values(cols))
}

fn perm_entropy(x: &[f64]) -> f64 {
    let mut counts: HashMap<[usize; 3], f64> = HashMap::new();
    for t in 0..x.len() - 2 {
        let w = [x[t], x[t + 1], x[t + 2]];
        let mut rank = [0usize; 3];
        for i in 0..3 {
            for j in 0..3 {
                if w[j] < w[i] || (w[j] == w[i] && j < i) {
                    rank[i] += 1;
                }
            }
        }
        *counts.entry(rank).or_default() += 1.0;
    }
    let c: Vec<f64> = counts.values().copied().collect();
    entropy_of_counts(&c) / (6.0f64).ln()
}

fn hist_entropy(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0.0; 16];
    for &v in x {
        let mut b = 0;
        if hi > lo {
            while b < 15 && v >= lo + (b + 1) as f64 * (hi - lo) / 16.0 {
                b += 1;
            }
        }
        counts[b] += 1.0;
    }
    entropy_of_counts(&counts)
}

/// The 22 window statistics in catalog order.
pub fn stats_oracle(x: &[f64]) -> [f64; 22] {
    let n = x.len() as f64;
    let mut sum = 0.0;
    let mut energy = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        sum += v;
        energy += v * v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mean = sum / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        m2 += d * d / n;
        m3 += d * d * d / n;
        m4 += d * d * d * d / n;
    }
    let (skew, kurt) = if m2 == 0.0 { (f64::NAN, f64::NAN) } else { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) };
    let mut peaks = 0.0;
    let mut line = 0.0;
    let mut flips = 0.0;
    for i in 1..x.len() {
        line += (x[i] - x[i - 1]).abs();
        if (x[i] > 0.0 && x[i - 1] < 0.0) || (x[i] < 0.0 && x[i - 1] > 0.0) {
            flips += 1.0;
        }
        if i + 1 < x.len() && x[i] > x[i - 1] && x[i] > x[i + 1] {
            peaks += 1.0;
        }
    }
    let above = x.iter().filter(|&&v| v > mean).count() as f64;
    let below = x.iter().filter(|&&v| v < mean).count() as f64;
    let (p5, p25, p75, p95) = (percentile(x, 5.0), percentile(x, 25.0), percentile(x, 75.0), percentile(x, 95.0));
    [
        mean,
        m2.sqrt(),
        lo,
        hi,
        hi - lo,
        sum,
        energy,
        skew,
        kurt,
        peaks,
        (energy / n).sqrt(),
        line,
        above,
        below,
        flips,
        p75 - p25,
        p95 - p5,
        p5,
        p95,
        hist_entropy(x),
        perm_entropy(x),
        svd_entropy(x),
    ]
}

// ------------------------------------------------------------------- metrics

/// Concordant-pair AUC: P(score_pos > score_neg) + 0.5 P(tie).
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Per-class and support-weighted (precision, recall, F1) recounted from
/// the rows; 0/0 counts as 0.
pub fn prf_recount(truth: &[u8], pred: &[u8]) -> ([[f64; 3]; 2], [f64; 3]) {
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let mut per = [[0.0; 3]; 2];
    let mut weighted = [0.0; 3];
    for c in 0..2u8 {
        let mut hit = 0.0;
        let mut predicted = 0.0;
        let mut actual = 0.0;
        for (&t, &p) in truth.iter().zip(pred) {
            if p == c {
                predicted += 1.0;
            }
            if t == c {
                actual += 1.0;
                if p == c {
                    hit += 1.0;
                }
            }
        }
        let pr = div(hit, predicted);
        let re = div(hit, actual);
        let f1 = div(2.0 * pr * re, pr + re);
        per[c as usize] = [pr, re, f1];
        for k in 0..3 {
            weighted[k] += per[c as usize][k] * actual / truth.len() as f64;
        }
    }
    (per, weighted)
}

pub fn balanced_accuracy(truth: &[u8], pred: &[u8]) -> f64 {
    let mut rate = 0.0;
    for c in 0..2u8 {
        let n = truth.iter().filter(|&&t| t == c).count() as f64;
        let hit = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
        rate += hit / n / 2.0;
    }
    rate
}

// -------------------------------------------------------------------- data

pub fn matrix(values: Array2<f64>, labels: Vec<RowLabel>) -> FeatureMatrix {
    let n = values.nrows();
    let names = (0..values.ncols()).map(|j| format!("f{j}")).collect();
    let meta = (0..n)
        .map(|i| RowMeta { participant_id: format!("P{:02}", i % 7), session_id: "S1".into(), window_start: i as f64 * 60.0 })
        .collect();
    FeatureMatrix::new(names, values, meta, labels)
}

/// Two Gaussian blobs in `d` dimensions with unit variance and class means
/// at `-sep/2` and `+sep/2` on every axis. Class 1 has rate `positive`.
pub fn blobs(seed_value: u64, n: usize, d: usize, sep: f64, positive: f64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = seed::rng(seed::derive_named(seed_value, "blobs"));
    let unit = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < positive)).collect();
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let centre = if y[i] == 1 { sep / 2.0 } else { -sep / 2.0 };
        for j in 0..d {
            x[[i, j]] = centre + unit.sample(&mut rng);
        }
    }
    (x, y)
}

// ------------------------------------------------------------ self-training

/// Blobs with `labeled` of the training rows keeping their labels and a
/// stratified 30% test split held out. Returns the training matrix, the
/// true training labels, and the test rows.
pub fn semi_supervised(
    seed_value: u64,
    n: usize,
    d: usize,
    sep: f64,
    labeled: f64,
) -> (FeatureMatrix, Vec<u8>, Array2<f64>, Vec<u8>) {
    let (x, y) = blobs(seed_value, n, d, sep, 0.3);
    let (train, test) = eval::stratified_split(&y, &SplitSpec { seed: seed_value, ..Default::default() }).unwrap();
    let mut rng = seed::rng(seed::derive_named(seed_value, "keep-labels"));
    let truth: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let mut labels: Vec<RowLabel> = truth
        .iter()
        .map(|&c| if rng.random::<f64>() < labeled { RowLabel::from_class(c) } else { RowLabel::Unlabeled })
        .collect();
    // Guarantee both classes among the kept labels.
    for c in 0..2u8 {
        if !labels.iter().any(|l| l.class() == Some(c)) {
            let i = truth.iter().position(|&t| t == c).unwrap();
            labels[i] = RowLabel::from_class(c);
        }
    }
    let m = matrix(x.select(Axis(0), &train), labels);
    (m, truth, x.select(Axis(0), &test), test.iter().map(|&i| y[i]).collect())
}

/// Monotone growth, immutability, admission above threshold and bounded
/// iterations for one run.
pub fn check_self_train_invariants(m: &FeatureMatrix, cfg: &SelfTrainConfig, hp: &Hyperparams) -> Result<usize, String> {
    let (_, out, report) = self_train(m, cfg, hp).map_err(|e| e.to_string())?;
    let initial_labeled = m.row_labels.iter().filter(|l| l.class().is_some()).count();
    if report.iterations.len() > cfg.max_iter {
        return Err(format!("{} iterations exceed {}", report.iterations.len(), cfg.max_iter));
    }
    let mut labeled = initial_labeled;
    let mut remaining = report.initial_unlabeled;
    for (k, it) in report.iterations.iter().enumerate() {
        let admitted = report.assignments.iter().filter(|a| a.iteration == it.iter).count();
        if it.iter != k + 1 || admitted != it.new_labels || it.pseudo_normal + it.pseudo_agitation != it.new_labels {
            return Err(format!("iteration {} record disagrees with its assignments", it.iter));
        }
        labeled += it.new_labels;
        if it.remaining_unlabeled + it.new_labels != remaining {
            return Err(format!("iteration {}: labeled set did not grow monotonically", it.iter));
        }
        remaining = it.remaining_unlabeled;
    }
    if labeled != report.final_normal + report.final_agitation {
        return Err("final labeled count mismatch".into());
    }
    let mut seen = std::collections::HashSet::new();
    for a in &report.assignments {
        if !seen.insert(a.row) {
            return Err(format!("row {} pseudo-labeled twice", a.row));
        }
        if m.row_labels[a.row] != RowLabel::Unlabeled {
            return Err(format!("row {} was already labeled", a.row));
        }
        if out.row_labels[a.row].class() != Some(a.class) {
            return Err(format!("row {} changed its pseudo-label", a.row));
        }
        if !(a.probability > cfg.threshold) {
            return Err(format!("row {} admitted at probability {}", a.row, a.probability));
        }
    }
    for i in 0..m.nrows() {
        if m.row_labels[i] != RowLabel::Unlabeled && out.row_labels[i] != m.row_labels[i] {
            return Err(format!("given label of row {i} changed"));
        }
    }
    let consistent = match report.termination {
        Termination::NoUnlabeled => report.final_unlabeled == 0,
        Termination::Converged => report.iterations.last().is_some_and(|r| r.new_labels == 0),
        Termination::MaxIter => report.iterations.len() == cfg.max_iter,
    };
    if !consistent {
        return Err(format!("termination {:?} inconsistent with the run", report.termination));
    }
    Ok(report.iterations.len())
}

/// With nothing unlabeled the self-trained model is the supervised fit.
pub fn check_zero_unlabeled_identity(seed_value: u64, kind: ClassifierKind) -> Result<(), String> {
    let (x, y) = blobs(seed_value, 120, 3, 1.0, 0.4);
    let m = matrix(x.clone(), y.iter().map(|&c| RowLabel::from_class(c)).collect());
    let hp = Hyperparams::default();
    let cfg = SelfTrainConfig { base: kind, seed: seed_value, ..Default::default() };
    let (st, _, report) = self_train(&m, &cfg, &hp).map_err(|e| e.to_string())?;
    let sup = Model::fit(kind, x.view(), &y, &hp, seed_value).map_err(|e| e.to_string())?;
    let (a, b) = (st.predict_proba(x.view()).unwrap(), sup.predict_proba(x.view()).unwrap());
    let identical = a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits());
    if report.termination != Termination::NoUnlabeled || !identical {
        return Err(format!("{kind:?}: predictions differ from the supervised fit"));
    }
    Ok(())
}

pub struct Efficacy {
    pub pseudo_accuracy: f64,
    pub self_trained: f64,
    pub baseline: f64,
}

/// One seed of the blobs efficacy experiment with the default base model.
/// Class centres sit 3 sd from the origin on every axis, so even a single
/// axis-aligned split separates them.
pub fn blobs_efficacy(seed_value: u64) -> Efficacy {
    let (m, truth, x_test, y_test) = semi_supervised(seed_value, 1000, 5, 6.0, 0.1);
    let hp = Hyperparams::default();
    let cfg = SelfTrainConfig { seed: seed_value, ..Default::default() };
    let (model, _, report) = self_train(&m, &cfg, &hp).unwrap();
    let correct = report.assignments.iter().filter(|a| truth[a.row] == a.class).count();
    let pseudo_accuracy = if report.assignments.is_empty() { 1.0 } else { correct as f64 / report.assignments.len() as f64 };
    let (x, y) = m.labeled_xy();
    let base = Model::fit(cfg.base, x.view(), &y, &hp, seed_value).unwrap();
    Efficacy {
        pseudo_accuracy,
        self_trained: balanced_accuracy(&y_test, &model.predict(x_test.view()).unwrap()),
        baseline: balanced_accuracy(&y_test, &base.predict(x_test.view()).unwrap()),
    }
}

// ------------------------------------------------------------ metric checks

/// Random scores with ties on `n` rows holding both classes.
pub fn scored_rows(seed_value: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seed::rng(seed::derive_named(seed_value, "scores"));
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    y[0] = 0;
    y[n - 1] = 1;
    let levels = rng.random_range(2..20) as f64;
    let s = y.iter().map(|&c| ((rng.random::<f64>() + 0.3 * c as f64) * levels).round() / levels).collect();
    (s, y)
}

pub fn check_auc_against_pairs(seed_value: u64, n: usize) -> Result<f64, String> {
    let (s, y) = scored_rows(seed_value, n);
    let (auc, _) = eval::roc_auc(&s, &y).map_err(|e| e.to_string())?;
    let want = pair_auc(&s, &y);
    if (auc - want).abs() > 1e-9 {
        return Err(format!("n = {n}: trapezoid {auc} vs pairs {want}"));
    }
    Ok((auc - want).abs())
}

pub fn check_prf_recount(seed_value: u64, n: usize) -> Result<(), String> {
    let mut rng = seed::rng(seed::derive_named(seed_value, "prf"));
    let truth: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    let cm = eval::ConfusionMatrix::from_predictions(&truth, &pred).map_err(|e| e.to_string())?;
    let got = eval::prf_scores(&cm);
    let (per, weighted) = prf_recount(&truth, &pred);
    let mut diffs = vec![
        got.weighted_precision - weighted[0],
        got.weighted_recall - weighted[1],
        got.weighted_f1 - weighted[2],
    ];
    for c in 0..2 {
        diffs.extend([got.precision[c] - per[c][0], got.recall[c] - per[c][1], got.f1[c] - per[c][2]]);
    }
    if diffs.iter().any(|d| d.abs() > 1e-12) {
        return Err(format!("seed {seed_value}: P/R/F1 differ from the recount"));
    }
    Ok(())
}

/// Test-side count of each class within one sample of `n_c * fraction`.
pub fn check_split_proportions(seed_value: u64) -> Result<(), String> {
    let mut rng = seed::rng(seed::derive_named(seed_value, "split-vector"));
    let n = rng.random_range(10..400);
    let rate: f64 = rng.random_range(0.05..0.5);
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < rate)).collect();
    y[0] = 1;
    y[1] = 1;
    y[2] = 0;
    y[3] = 0;
    let spec = SplitSpec { seed: seed_value, ..Default::default() };
    let (train, test) = eval::stratified_split(&y, &spec).map_err(|e| e.to_string())?;
    if train.len() + test.len() != n {
        return Err("split lost rows".into());
    }
    for c in 0..2u8 {
        let total = y.iter().filter(|&&v| v == c).count() as f64;
        let in_test = test.iter().filter(|&&i| y[i] == c).count() as f64;
        if (in_test - total * spec.test_fraction).abs() > 1.0 {
            return Err(format!("class {c}: {in_test} of {total} rows in test"));
        }
    }
    Ok(())
}

// ------------------------------------------------------------ VAE gradients

fn dense(p: &VaeParams, idx: usize, x: &[f64]) -> Vec<f64> {
    let l = &p.layers[idx];
    (0..l.outputs())
        .map(|o| l.bias[o] + (0..l.inputs()).map(|i| x[i] * l.weights[[i, o]]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|a| a.max(0.0)).collect()
}

/// Naive per-sample forward pass and batch-mean objective.
pub fn oracle_loss(p: &VaeParams, x: &Array2<f64>, eps: &Array2<f64>) -> f64 {
    let k = p.hidden_dims.len();
    let mut total = 0.0;
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).to_vec();
        let mut h = row.clone();
        for i in 0..k {
            h = relu(dense(p, i, &h));
        }
        let mu = dense(p, k, &h);
        let lv = dense(p, k + 1, &h);
        let mut z: Vec<f64> = (0..mu.len()).map(|j| mu[j] + (0.5 * lv[j]).exp() * eps[[r, j]]).collect();
        for i in 0..k {
            z = relu(dense(p, k + 2 + i, &z));
        }
        let out = dense(p, 2 * k + 2, &z);
        for (t, logit) in row.iter().zip(out) {
            let q = 1.0 / (1.0 + (-logit).exp());
            total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        for j in 0..mu.len() {
            total -= 0.5 * (1.0 + lv[j] - mu[j] * mu[j] - lv[j].exp());
        }
    }
    total / x.nrows() as f64
}

/// Worst relative error between backprop and central differences
/// (h = 1e-5) over every parameter of one seeded tiny network.
pub fn gradient_check(seed_value: u64, input: usize, hidden: &[usize], latent: usize) -> Result<f64, String> {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut rng = seed::rng(seed::derive_named(seed_value, "gradcheck"));
    let mut p = VaeParams::new_random(input, hidden, latent, &mut rng);
    // Zero biases put ReLU units exactly on their kink; move off it.
    for l in &mut p.layers {
        l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let x = Array2::from_shape_simple_fn((4, input), || rng.random_range(0.05..0.95));
    let eps = Array2::from_shape_simple_fn((4, latent), || StandardNormal.sample(&mut rng));
    let cache = p.forward(x.view(), eps.clone());
    let grads = p.backward(x.view(), &cache);
    let forward_gap = (p.batch_loss(x.view(), &cache).vae - oracle_loss(&p, &x, &eps)).abs();
    if forward_gap > 1e-10 {
        return Err(format!("seed {seed_value}: forward loss differs from the oracle by {forward_gap:e}"));
    }
    for li in 0..p.layers.len() {
        let shape = p.layers[li].weights.dim();
        let mut coords: Vec<Option<(usize, usize)>> =
            (0..shape.0).flat_map(|i| (0..shape.1).map(move |o| Some((i, o)))).collect();
        coords.extend((0..shape.1).map(|_| None));
        for (ci, c) in coords.into_iter().enumerate() {
            let bump = |d: f64| {
                let mut q = p.clone();
                match c {
                    Some(ij) => q.layers[li].weights[ij] += d,
                    None => q.layers[li].bias[ci - shape.0 * shape.1] += d,
                }
                oracle_loss(&q, &x, &eps)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = match c {
                Some(ij) => grads[li].weights[ij],
                None => grads[li].bias[ci - shape.0 * shape.1],
            };
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max(rel);
            if rel >= 1e-5 {
                return Err(format!("seed {seed_value} layer {li} {c:?}: analytic {analytic} numeric {numeric}"));
            }
        }
    }
    Ok(worst)
}

/// The tiny configurations swept by the gradient tests, one per seed.
pub fn gradient_config(seed_value: u64) -> (usize, Vec<usize>, usize) {
    let shapes: [&[usize]; 3] = [&[6, 4], &[5, 4], &[4, 3]];
    (3 + (seed_value % 6) as usize, shapes[(seed_value % 3) as usize].to_vec(), 1 + (seed_value % 3) as usize)
}

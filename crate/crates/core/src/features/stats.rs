//! The 22 per-window statistics.
//!
//! All functions take the gap-free samples of one window. Undefined values
//! (zero-variance moments, empty singular spectrum) are NaN.

use nalgebra::DMatrix;

pub const HISTOGRAM_BINS: usize = 16;
pub const PERMUTATION_ORDER: usize = 3;
pub const SSA_EMBEDDING: usize = 10;

pub const STAT_NAMES: [&str; 22] = [
    "mean",
    "std",
    "min",
    "max",
    "ptp",
    "sum",
    "energy",
    "skewness",
    "kurtosis",
    "peak_count",
    "rms",
    "line_integral",
    "count_above_mean",
    "count_below_mean",
    "sign_changes",
    "iqr",
    "ipr_5_95",
    "p05",
    "p95",
    "hist_entropy",
    "perm_entropy",
    "svd_entropy",
];

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Central moment of order `k` (population).
pub fn central_moment(x: &[f64], k: i32) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

pub fn std(x: &[f64]) -> f64 {
    central_moment(x, 2).sqrt()
}

pub fn skewness(x: &[f64]) -> f64 {
    let m2 = central_moment(x, 2);
    if m2 == 0.0 {
        return f64::NAN;
    }
    central_moment(x, 3) / m2.powf(1.5)
}

/// Excess kurtosis.
pub fn kurtosis(x: &[f64]) -> f64 {
    let m2 = central_moment(x, 2);
    if m2 == 0.0 {
        return f64::NAN;
    }
    central_moment(x, 4) / (m2 * m2) - 3.0
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn line_integral(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Strict interior local maxima.
pub fn peak_count(x: &[f64]) -> usize {
    x.windows(3).filter(|w| w[0] < w[1] && w[1] > w[2]).count()
}

/// Consecutive pairs of strictly opposite sign.
pub fn sign_changes(x: &[f64]) -> usize {
    x.windows(2).filter(|w| w[0] * w[1] < 0.0).count()
}

/// Percentile `q` in [0, 100] of sorted data, linear interpolation.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Shannon entropy (nats) of a 16-bin equal-width histogram over [min, max].
pub fn histogram_entropy(x: &[f64], min: f64, max: f64) -> f64 {
    let mut counts = [0usize; HISTOGRAM_BINS];
    let width = max - min;
    for &v in x {
        let bin = if width > 0.0 {
            (((v - min) / width * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    shannon(counts.iter().map(|&c| c as f64))
}

fn shannon(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let total: f64 = weights.clone().sum();
    -weights
        .filter(|&w| w > 0.0)
        .map(|w| {
            let p = w / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Ordinal-pattern entropy (order 3, delay 1) normalized by ln(3!).
/// Ties rank by position.
pub fn permutation_entropy(x: &[f64]) -> f64 {
    if x.len() < PERMUTATION_ORDER {
        return f64::NAN;
    }
    let mut counts = [0usize; 6];
    for w in x.windows(PERMUTATION_ORDER) {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
        let code = match idx {
            [0, 1, 2] => 0,
            [0, 2, 1] => 1,
            [1, 0, 2] => 2,
            [1, 2, 0] => 3,
            [2, 0, 1] => 4,
            _ => 5,
        };
        counts[code] += 1;
    }
    shannon(counts.iter().map(|&c| c as f64)) / 6f64.ln()
}

/// Entropy of the normalized singular spectrum of the delay-embedded
/// trajectory matrix (embedding dimension 10).
pub fn svd_entropy(x: &[f64]) -> f64 {
    if x.len() < SSA_EMBEDDING {
        return f64::NAN;
    }
    let rows = x.len() - SSA_EMBEDDING + 1;
    let m = DMatrix::from_fn(rows, SSA_EMBEDDING, |i, j| x[i + j]);
    let sv = m.singular_values();
    let total: f64 = sv.iter().sum();
    if total <= 0.0 {
        return f64::NAN;
    }
    shannon(sv.iter().copied())
}

/// All 22 statistics in catalog order for gap-free samples.
pub fn compute(x: &[f64]) -> [f64; 22] {
    if x.is_empty() {
        return [f64::NAN; 22];
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let m = mean(x);
    let sum: f64 = x.iter().sum();
    let e = energy(x);
    let p5 = percentile_sorted(&sorted, 5.0);
    let p25 = percentile_sorted(&sorted, 25.0);
    let p75 = percentile_sorted(&sorted, 75.0);
    let p95 = percentile_sorted(&sorted, 95.0);
    [
        m,
        std(x),
        min,
        max,
        max - min,
        sum,
        e,
        skewness(x),
        kurtosis(x),
        peak_count(x) as f64,
        (e / x.len() as f64).sqrt(),
        line_integral(x),
        x.iter().filter(|&&v| v > m).count() as f64,
        x.iter().filter(|&&v| v < m).count() as f64,
        sign_changes(x) as f64,
        p75 - p25,
        p95 - p5,
        p5,
        p95,
        histogram_entropy(x, min, max),
        permutation_entropy(x),
        svd_entropy(x),
    ]
}

//! Electrodermal activity cleaning and tonic/phasic decomposition.

use super::{filter, PreprocessError, FILTER_ORDER};
use crate::ingest::ChannelSeries;

pub const VALID_MIN_US: f64 = 0.01;
pub const VALID_MAX_US: f64 = 100.0;
/// Invalid runs up to this long are interpolated; longer ones become gaps.
pub const MAX_INTERPOLATED_S: f64 = 5.0;
pub const SMOOTHING_CUTOFF_HZ: f64 = 1.0;
pub const TONIC_WINDOW_S: f64 = 30.0;

/// Mark out-of-range samples (and samples already flagged as parse gaps)
/// invalid, bridge short invalid runs linearly and hold long runs at the
/// nearest valid neighbour, flagging them in the returned mask.
pub fn eda_artifact_removal(eda: &ChannelSeries) -> (ChannelSeries, Vec<bool>) {
    let n = eda.len();
    let parse_gaps = eda.gap_flags();
    let invalid: Vec<bool> = eda
        .values
        .iter()
        .zip(&parse_gaps)
        .map(|(&v, &g)| g || !(VALID_MIN_US..=VALID_MAX_US).contains(&v))
        .collect();
    let mut out = eda.clone();
    out.gaps.clear();
    let mut mask = vec![false; n];
    let max_run = (MAX_INTERPOLATED_S * eda.sample_rate).floor() as usize;

    let mut i = 0;
    while i < n {
        if !invalid[i] {
            i += 1;
            continue;
        }
        let j = invalid[i..].iter().position(|&b| !b).map_or(n, |k| i + k);
        let left = i.checked_sub(1).map(|l| (l, eda.values[l]));
        let right = (j < n).then(|| (j, eda.values[j]));
        let run = j - i;
        for k in i..j {
            out.values[k] = match (left, right) {
                (Some((l, lv)), Some((r, rv))) if run <= max_run => {
                    lv + (rv - lv) * (k - l) as f64 / (r - l) as f64
                }
                (Some((l, lv)), Some((r, rv))) => {
                    if k - l <= r - k {
                        lv
                    } else {
                        rv
                    }
                }
                (Some((_, lv)), None) => lv,
                (None, Some((_, rv))) => rv,
                (None, None) => 0.0,
            };
            if run > max_run || (left.is_none() && right.is_none()) {
                mask[k] = true;
            }
        }
        i = j;
    }
    (out, mask)
}

/// Centered moving mean with truncated edge windows.
pub fn moving_mean(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Decomposition of a cleaned EDA signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdaComponents {
    pub smoothed: Vec<f64>,
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
}

/// 1 Hz zero-phase smoothing, tonic = 30 s centered moving mean of the
/// smoothed signal, phasic = smoothed - tonic.
pub fn eda_decompose(eda: &ChannelSeries) -> Result<EdaComponents, PreprocessError> {
    let smoothed = filter::lowpass(&eda.values, eda.sample_rate, SMOOTHING_CUTOFF_HZ, FILTER_ORDER)?;
    let half = (TONIC_WINDOW_S * eda.sample_rate / 2.0).round() as usize;
    let tonic = moving_mean(&smoothed, half);
    let phasic = smoothed.iter().zip(&tonic).map(|(s, t)| s - t).collect();
    Ok(EdaComponents { smoothed, tonic, phasic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ChannelName;

    fn eda(values: Vec<f64>) -> ChannelSeries {
        ChannelSeries::new(ChannelName::Eda, 0.0, 4.0, values)
    }

    #[test]
    fn constant_decomposes_to_flat_tonic() {
        let c = eda_decompose(&eda(vec![2.0; 4 * 120])).unwrap();
        assert!(c.tonic.iter().all(|&t| (t - 2.0).abs() < 1e-12));
        assert!(c.phasic.iter().all(|&p| p.abs() < 1e-12));
    }

    #[test]
    fn decomposition_identity() {
        let x: Vec<f64> = (0..4 * 300).map(|i| 2.0 + (i as f64 * 0.013).sin() + 0.001 * i as f64).collect();
        let c = eda_decompose(&eda(x)).unwrap();
        for i in 0..c.smoothed.len() {
            assert!((c.tonic[i] + c.phasic[i] - c.smoothed[i]).abs() < 1e-9);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&c.phasic) - (mean(&c.smoothed) - mean(&c.tonic))).abs() < 1e-6);
    }

    #[test]
    fn gaussian_bump_lands_in_phasic() {
        let n = 4 * 600;
        let ramp: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * i as f64 / n as f64).collect();
        let bump: Vec<f64> = (0..n)
            .map(|i| {
                // 4 s wide: support of +-3 sigma.
                let t = i as f64 / 4.0 - 300.0;
                let sigma = 4.0 / 6.0;
                0.5 * (-0.5 * (t / sigma).powi(2)).exp()
            })
            .collect();
        let with: Vec<f64> = ramp.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let a = eda_decompose(&eda(with)).unwrap();
        let b = eda_decompose(&eda(ramp)).unwrap();
        let diff_phasic: Vec<f64> = a.phasic.iter().zip(&b.phasic).map(|(x, y)| x - y).collect();
        let diff_smooth: Vec<f64> = a.smoothed.iter().zip(&b.smoothed).map(|(x, y)| x - y).collect();
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let ratio = energy(&diff_phasic) / energy(&diff_smooth);
        assert!(ratio >= 0.9, "phasic energy share {ratio}");
    }

    #[test]
    fn single_outlier_is_interpolated() {
        let mut x = vec![2.0, 2.0, 2.0, 4.0, 4.0];
        x[2] = 500.0;
        let (out, mask) = eda_artifact_removal(&eda(x));
        assert_eq!(out.values, vec![2.0, 2.0, 3.0, 4.0, 4.0]);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn long_invalid_run_is_masked_and_held() {
        let mut x = vec![1.0; 20];
        x.extend(vec![0.0; 40]);
        x.extend(vec![3.0; 20]);
        let (out, mask) = eda_artifact_removal(&eda(x));
        assert_eq!(mask.iter().filter(|&&m| m).count(), 40);
        assert!(mask[20..60].iter().all(|&m| m));
        assert!(out.values[20..40].iter().all(|&v| v == 1.0));
        assert!(out.values[40..60].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn valid_signal_untouched() {
        let x: Vec<f64> = (0..200).map(|i| 1.0 + (i as f64).sin().abs()).collect();
        let (out, mask) = eda_artifact_removal(&eda(x.clone()));
        assert_eq!(out.values, x);
        assert!(!mask.contains(&true));
    }
}

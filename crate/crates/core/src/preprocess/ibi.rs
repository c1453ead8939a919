//! Beat detection on the blood volume pulse.

use serde::{Deserialize, Serialize};

use super::{filter, PreprocessError};
use crate::ingest::ChannelSeries;

pub const BAND_LOW_HZ: f64 = 0.5;
pub const BAND_HIGH_HZ: f64 = 4.0;
pub const MIN_INTERVAL_S: f64 = 0.33;
pub const MAX_INTERVAL_S: f64 = 2.0;
const PROMINENCE_FACTOR: f64 = 0.3;
const ROLLING_STD_S: f64 = 10.0;

/// An accepted inter-beat interval, stamped with the beat that closes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub end_time: f64,
    pub seconds: f64,
}

/// Detected beats and the physiologically plausible intervals between them.
///
/// `beat_times` holds every surviving peak. `intervals` holds only the
/// consecutive-beat differences inside `[0.33, 2.0]` s; a rejected
/// difference leaves a hole rather than shifting later intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbiSeries {
    pub beat_times: Vec<f64>,
    pub intervals: Vec<Interval>,
}

impl IbiSeries {
    pub fn interval_seconds(&self) -> Vec<f64> {
        self.intervals.iter().map(|i| i.seconds).collect()
    }
}

pub fn bandpass_bvp(values: &[f64], fs: f64) -> Result<Vec<f64>, PreprocessError> {
    filter::bandpass(values, fs, BAND_LOW_HZ, BAND_HIGH_HZ, super::FILTER_ORDER)
}

/// Centered rolling population standard deviation via prefix sums.
fn rolling_std(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for i in 0..n {
        s1[i + 1] = s1[i] + x[i];
        s2[i + 1] = s2[i] + x[i] * x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let m = (hi - lo) as f64;
            let mean = (s1[hi] - s1[lo]) / m;
            ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Topographic prominence of the peak at `p`, searching at most `wlen`
/// samples to each side.
fn prominence(x: &[f64], p: usize, wlen: usize) -> f64 {
    let lo = p.saturating_sub(wlen);
    let hi = (p + wlen).min(x.len() - 1);
    let mut left_min = x[p];
    for i in (lo..p).rev() {
        if x[i] > x[p] {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = x[p];
    for &v in &x[p + 1..=hi] {
        if v > x[p] {
            break;
        }
        right_min = right_min.min(v);
    }
    x[p] - left_min.max(right_min)
}

/// Local maxima (plateaus resolve to their middle sample).
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Keep the tallest peaks first, suppressing neighbours closer than
/// `distance` samples.
fn enforce_distance(x: &[f64], peaks: &[usize], distance: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; peaks.len()];
    for &k in &order {
        if !keep[k] {
            continue;
        }
        let p = peaks[k];
        for j in (0..k).rev() {
            if p - peaks[j] >= distance {
                break;
            }
            keep[j] = false;
        }
        for j in k + 1..peaks.len() {
            if peaks[j] - p >= distance {
                break;
            }
            keep[j] = false;
        }
    }
    peaks.iter().zip(keep).filter_map(|(&p, k)| k.then_some(p)).collect()
}

/// Peak indices of an already band-passed pulse signal.
pub fn detect_peaks(filtered: &[f64], fs: f64) -> Vec<usize> {
    if filtered.len() < 3 {
        return Vec::new();
    }
    let distance = (MIN_INTERVAL_S * fs).ceil() as usize;
    let wlen = (MAX_INTERVAL_S * fs).ceil() as usize;
    let std = rolling_std(filtered, (ROLLING_STD_S * fs / 2.0).round() as usize);
    let candidates: Vec<usize> = local_maxima(filtered)
        .into_iter()
        .filter(|&p| std[p] > 0.0 && prominence(filtered, p, wlen) >= PROMINENCE_FACTOR * std[p])
        .collect();
    enforce_distance(filtered, &candidates, distance)
}

/// Band-pass the pulse, pick beats and gate the intervals.
pub fn detect_ibi(bvp: &ChannelSeries) -> Result<IbiSeries, PreprocessError> {
    let fs = bvp.sample_rate;
    let filtered = bandpass_bvp(&bvp.values, fs)?;
    ibi_from_filtered(&filtered, bvp.start_time, fs)
}

pub(crate) fn ibi_from_filtered(filtered: &[f64], start: f64, fs: f64) -> Result<IbiSeries, PreprocessError> {
    let peaks = detect_peaks(filtered, fs);
    if peaks.len() < 2 {
        return Err(PreprocessError::NoBeatsDetected);
    }
    let beat_times: Vec<f64> = peaks.iter().map(|&p| start + p as f64 / fs).collect();
    let intervals: Vec<Interval> = peaks
        .windows(2)
        .zip(beat_times.windows(2))
        .map(|(p, t)| Interval { end_time: t[1], seconds: (p[1] - p[0]) as f64 / fs })
        .filter(|i| (MIN_INTERVAL_S..=MAX_INTERVAL_S).contains(&i.seconds))
        .collect();
    if intervals.is_empty() {
        return Err(PreprocessError::NoBeatsDetected);
    }
    Ok(IbiSeries { beat_times, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ChannelName;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn bvp(values: Vec<f64>) -> ChannelSeries {
        ChannelSeries::new(ChannelName::Bvp, 0.0, 64.0, values)
    }

    #[test]
    fn pure_sinusoid_period() {
        let x = (0..64 * 60).map(|i| (2.0 * PI * 1.2 * i as f64 / 64.0).sin()).collect();
        let ibi = detect_ibi(&bvp(x)).unwrap();
        assert!(ibi.intervals.len() >= 65);
        for i in &ibi.intervals {
            assert!((i.seconds - 1.0 / 1.2).abs() <= 1.0 / 64.0, "{}", i.seconds);
        }
    }

    #[test]
    fn noisy_pulse_train_70_bpm() {
        let mut rng = crate::seed::rng(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let f = 70.0 / 60.0;
        let x = (0..64 * 120)
            .map(|i| {
                let t = i as f64 / 64.0;
                let phase = 2.0 * PI * f * t;
                phase.sin() + 0.25 * (2.0 * phase).sin() + noise.sample(&mut rng)
            })
            .collect();
        let ibi = detect_ibi(&bvp(x)).unwrap();
        let s = ibi.interval_seconds();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 60.0 / 70.0).abs() / (60.0 / 70.0) < 0.02, "mean {mean}");
    }

    #[test]
    fn flat_signal_has_no_beats() {
        assert!(matches!(detect_ibi(&bvp(vec![0.0; 64 * 30])), Err(PreprocessError::NoBeatsDetected)));
    }

    #[test]
    fn distance_suppression_keeps_tallest() {
        let x = [0.0, 1.0, 0.0, 2.0, 0.0, 0.5, 0.0];
        let peaks = local_maxima(&x);
        assert_eq!(peaks, vec![1, 3, 5]);
        assert_eq!(enforce_distance(&x, &peaks, 3), vec![3]);
    }

    #[test]
    fn prominence_of_isolated_peak() {
        let x = [0.0, 1.0, 3.0, 1.0, 2.0, 0.5];
        assert_eq!(prominence(&x, 2, 10), 2.5);
        assert_eq!(prominence(&x, 4, 10), 1.0);
    }
}

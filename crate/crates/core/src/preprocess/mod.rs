//! Channel cleaning, filtering and alignment onto a common 4 Hz grid.
//!
//! ```text
//! ACC x/y/z (32 Hz) ── low-pass 10 Hz ── bin-mean ──┬── ACC_X/Y/Z
//!                                                   └── ACC_MAG = |acc|
//! BVP (64 Hz) ── band-pass 0.5-4 Hz ──┬── bin-mean ── BVP_F
//!                                     └── peaks ── IBI ── HR (held between beats)
//! EDA (4 Hz) ── artifact removal ── 1 Hz smoothing ── tonic (30 s mean) / phasic
//! TEMP (4 Hz) ── bin-mean ── TEMP
//! ```

pub mod eda;
pub mod filter;
pub mod ibi;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{ChannelName, ChannelSeries, SessionRecording};

pub use eda::{eda_artifact_removal, eda_decompose, EdaComponents};
pub use ibi::{detect_ibi, IbiSeries, Interval};

pub const GRID_RATE_HZ: f64 = 4.0;
pub const FILTER_ORDER: usize = 4;
pub const ACC_CUTOFF_HZ: f64 = 10.0;
pub const MIN_OVERLAP_S: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("cutoff {cutoff} Hz is not below the Nyquist frequency {nyquist} Hz")]
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("fewer than two usable beats detected")]
    NoBeatsDetected,
    #[error("channels overlap for {seconds:.1} s, need at least {MIN_OVERLAP_S} s")]
    InsufficientOverlap { seconds: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The nine analysis streams, in the fixed order used for feature columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    AccX,
    AccY,
    AccZ,
    AccMag,
    BvpF,
    Hr,
    EdaPhasic,
    EdaTonic,
    Temp,
}

impl Stream {
    pub const ALL: [Stream; 9] = [
        Stream::AccX,
        Stream::AccY,
        Stream::AccZ,
        Stream::AccMag,
        Stream::BvpF,
        Stream::Hr,
        Stream::EdaPhasic,
        Stream::EdaTonic,
        Stream::Temp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::AccX => "ACC_X",
            Stream::AccY => "ACC_Y",
            Stream::AccZ => "ACC_Z",
            Stream::AccMag => "ACC_MAG",
            Stream::BvpF => "BVP_F",
            Stream::Hr => "HR",
            Stream::EdaPhasic => "EDA_PHASIC",
            Stream::EdaTonic => "EDA_TONIC",
            Stream::Temp => "TEMP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSession {
    pub participant_id: String,
    pub session_id: String,
    pub grid_start: f64,
    pub grid_rate: f64,
    streams: Vec<Vec<f64>>,
    /// Smoothed EDA on the grid; `EDA_PHASIC + EDA_TONIC` reconstructs it.
    pub eda_smoothed: Vec<f64>,
    pub gap_mask: Vec<bool>,
}

impl AlignedSession {
    pub fn stream(&self, s: Stream) -> &[f64] {
        &self.streams[s.index()]
    }

    pub fn stream_count(&self) -> usize {
        self.streams.len()
    }

    pub fn len(&self) -> usize {
        self.gap_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gap_mask.is_empty()
    }

    pub fn time_at(&self, k: usize) -> f64 {
        self.grid_start + k as f64 / self.grid_rate
    }

    /// Build from already-gridded streams (ordered as [`Stream::ALL`]).
    pub fn from_streams(
        participant_id: impl Into<String>,
        session_id: impl Into<String>,
        grid_start: f64,
        streams: Vec<Vec<f64>>,
        gap_mask: Vec<bool>,
    ) -> Self {
        assert_eq!(streams.len(), Stream::ALL.len(), "expected nine streams");
        assert!(streams.iter().all(|s| s.len() == gap_mask.len()), "streams must have equal length");
        let eda_smoothed = streams[Stream::EdaPhasic.index()]
            .iter()
            .zip(&streams[Stream::EdaTonic.index()])
            .map(|(p, t)| p + t)
            .collect();
        Self {
            participant_id: participant_id.into(),
            session_id: session_id.into(),
            grid_start,
            grid_rate: GRID_RATE_HZ,
            streams,
            eda_smoothed,
            gap_mask,
        }
    }

    /// Debug dump, one row per grid sample.
    pub fn write_csv(&self, path: &Path) -> Result<(), PreprocessError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,acc_x,acc_y,acc_z,acc_mag,bvp_f,hr,eda_phasic,eda_tonic,temp,gap")?;
        for k in 0..self.len() {
            write!(w, "{}", self.time_at(k))?;
            for s in &self.streams {
                write!(w, ",{}", s[k])?;
            }
            writeln!(w, ",{}", u8::from(self.gap_mask[k]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Zero-phase Butterworth low-pass of a channel.
pub fn lowpass_filter(series: &ChannelSeries, cutoff: f64, order: usize) -> Result<ChannelSeries, PreprocessError> {
    let values = filter::lowpass(&series.values, series.sample_rate, cutoff, order)?;
    Ok(ChannelSeries { values, ..series.clone() })
}

/// Bin-mean of `values` (sampled at `rate` from `start`) onto `n_out` grid
/// samples starting at `grid_start`. Bins without source samples hold the
/// previous bin (or the first filled bin at the start). The second vector
/// flags bins containing any `gap` sample.
fn bin_mean(
    values: &[f64],
    gaps: Option<&[bool]>,
    rate: f64,
    start: f64,
    grid_start: f64,
    grid_rate: f64,
    n_out: usize,
) -> (Vec<f64>, Vec<bool>) {
    let mut sum = vec![0.0; n_out];
    let mut count = vec![0usize; n_out];
    let mut gap = vec![false; n_out];
    let offset = (start - grid_start) * grid_rate;
    let step = grid_rate / rate;
    for (i, &v) in values.iter().enumerate() {
        let pos = offset + i as f64 * step;
        if pos < -1e-9 {
            continue;
        }
        let bin = (pos + 1e-9).floor() as usize;
        if bin >= n_out {
            break;
        }
        sum[bin] += v;
        count[bin] += 1;
        if gaps.is_some_and(|g| g[i]) {
            gap[bin] = true;
        }
    }
    let mut out = vec![f64::NAN; n_out];
    let mut last = None;
    for k in 0..n_out {
        if count[k] > 0 {
            out[k] = sum[k] / count[k] as f64;
            last = Some(out[k]);
        } else if let Some(l) = last {
            out[k] = l;
        }
    }
    if let Some(first) = out.iter().copied().find(|v| !v.is_nan()) {
        for v in out.iter_mut().take_while(|v| v.is_nan()) {
            *v = first;
        }
    } else {
        out.fill(0.0);
    }
    (out, gap)
}

/// Decimate a gap-free channel onto a grid starting at its own start time.
pub fn resample_to_grid(series: &ChannelSeries, grid_rate: f64) -> Vec<f64> {
    let n_out = (series.duration() * grid_rate + 1e-9).floor() as usize;
    bin_mean(&series.values, None, series.sample_rate, series.start_time, series.start_time, grid_rate, n_out).0
}

fn grid_series(series: &ChannelSeries, values: &[f64], grid_start: f64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let gaps = series.gap_flags();
    bin_mean(values, Some(&gaps), series.sample_rate, series.start_time, grid_start, GRID_RATE_HZ, n)
}

/// Heart rate (bpm) held piecewise-constant from each accepted interval's
/// closing beat; samples before the first beat take the first rate.
pub fn heart_rate_on_grid(ibi: &IbiSeries, grid_start: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut current = 60.0 / ibi.intervals[0].seconds;
    for k in 0..n {
        let t = grid_start + k as f64 / GRID_RATE_HZ;
        while j < ibi.intervals.len() && ibi.intervals[j].end_time <= t {
            current = 60.0 / ibi.intervals[j].seconds;
            j += 1;
        }
        out.push(current);
    }
    out
}

/// Run every channel pipeline and join the results on the common span.
pub fn align_session(rec: &SessionRecording) -> Result<AlignedSession, PreprocessError> {
    let (start, end) = rec.common_span().unwrap_or((0.0, 0.0));
    let overlap = (end - start).max(0.0);
    if overlap < MIN_OVERLAP_S {
        return Err(PreprocessError::InsufficientOverlap { seconds: overlap });
    }
    let n = (overlap * GRID_RATE_HZ + 1e-9).floor() as usize;
    let mut gap_mask = vec![false; n];
    let mut merge_gaps = |g: &[bool]| {
        for (m, &g) in gap_mask.iter_mut().zip(g) {
            *m |= g;
        }
    };

    let mut acc = Vec::with_capacity(3);
    for name in [ChannelName::AccX, ChannelName::AccY, ChannelName::AccZ] {
        let ch = rec.channel(name);
        let filtered = filter::lowpass(&ch.values, ch.sample_rate, ACC_CUTOFF_HZ, FILTER_ORDER)?;
        let (v, g) = grid_series(ch, &filtered, start, n);
        merge_gaps(&g);
        acc.push(v);
    }
    let acc_mag: Vec<f64> = (0..n)
        .map(|k| (acc[0][k].powi(2) + acc[1][k].powi(2) + acc[2][k].powi(2)).sqrt())
        .collect();

    let bvp = rec.channel(ChannelName::Bvp);
    let bvp_filtered = ibi::bandpass_bvp(&bvp.values, bvp.sample_rate)?;
    let (bvp_f, g) = grid_series(bvp, &bvp_filtered, start, n);
    merge_gaps(&g);
    let beats = ibi::ibi_from_filtered(&bvp_filtered, bvp.start_time, bvp.sample_rate)?;
    let hr = heart_rate_on_grid(&beats, start, n);

    let eda_raw = rec.channel(ChannelName::Eda);
    let (eda_clean, eda_mask) = eda_artifact_removal(eda_raw);
    let parts = eda_decompose(&eda_clean)?;
    let (tonic, g) = bin_mean(&parts.tonic, Some(&eda_mask), eda_clean.sample_rate, eda_clean.start_time, start, GRID_RATE_HZ, n);
    merge_gaps(&g);
    let (phasic, _) = bin_mean(&parts.phasic, None, eda_clean.sample_rate, eda_clean.start_time, start, GRID_RATE_HZ, n);
    let (smoothed, _) = bin_mean(&parts.smoothed, None, eda_clean.sample_rate, eda_clean.start_time, start, GRID_RATE_HZ, n);

    let temp = rec.channel(ChannelName::Temp);
    let (temp_v, g) = grid_series(temp, &temp.values, start, n);
    merge_gaps(&g);

    let [acc_x, acc_y, acc_z]: [Vec<f64>; 3] = acc.try_into().expect("three axes");
    Ok(AlignedSession {
        participant_id: rec.participant_id.clone(),
        session_id: rec.session_id.clone(),
        grid_start: start,
        grid_rate: GRID_RATE_HZ,
        streams: vec![acc_x, acc_y, acc_z, acc_mag, bvp_f, hr, phasic, tonic, temp_v],
        eda_smoothed: smoothed,
        gap_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn series(name: ChannelName, start: f64, rate: f64, values: Vec<f64>) -> ChannelSeries {
        ChannelSeries::new(name, start, rate, values)
    }

    #[test]
    fn constant_survives_lowpass() {
        let s = series(ChannelName::AccX, 0.0, 32.0, vec![5.0; 32 * 20]);
        let out = lowpass_filter(&s, 10.0, 4).unwrap();
        assert_eq!(out.len(), s.len());
        assert!(out.values.iter().all(|v| (v - 5.0).abs() < 1e-6));
    }

    #[test]
    fn lowpass_separates_tones() {
        let fs = 64.0;
        let n = 64 * 40;
        let tone = |f: f64, i: usize| (2.0 * PI * f * i as f64 / fs).sin();
        let x: Vec<f64> = (0..n).map(|i| tone(1.0, i) + tone(15.0, i)).collect();
        let y = lowpass_filter(&series(ChannelName::Bvp, 0.0, fs, x), 10.0, 4).unwrap().values;
        // Project the middle of the output onto each tone.
        let (lo, hi) = (n / 4, 3 * n / 4);
        let amp = |f: f64| {
            let (mut s, mut c) = (0.0, 0.0);
            for (i, &yi) in y.iter().enumerate().take(hi).skip(lo) {
                let w = 2.0 * PI * f * i as f64 / fs;
                s += yi * w.sin();
                c += yi * w.cos();
            }
            2.0 * (s * s + c * c).sqrt() / (hi - lo) as f64
        };
        assert!((amp(1.0) - 1.0).abs() < 0.01, "1 Hz amplitude {}", amp(1.0));
        assert!(20.0 * amp(15.0).log10() <= -20.0, "15 Hz amplitude {}", amp(15.0));
    }

    #[test]
    fn cutoff_above_nyquist() {
        let s = series(ChannelName::AccX, 0.0, 32.0, vec![0.0; 64]);
        assert!(matches!(lowpass_filter(&s, 20.0, 4), Err(PreprocessError::CutoffAboveNyquist { .. })));
    }

    #[test]
    fn resample_constant_and_identity() {
        let s = series(ChannelName::AccX, 0.0, 32.0, vec![1.0; 32 * 8]);
        let r = resample_to_grid(&s, 4.0);
        assert_eq!(r, vec![1.0; 32]);

        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).cos() * 1e3 + 1.0 / 3.0).collect();
        let s = series(ChannelName::Temp, 1234.5, 4.0, x.clone());
        let r = resample_to_grid(&s, 4.0);
        assert_eq!(r.len(), x.len());
        assert!(r.iter().zip(&x).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn resample_ramp_bin_means() {
        let x: Vec<f64> = (0..640).map(|i| i as f64).collect();
        let r = resample_to_grid(&series(ChannelName::Bvp, 0.0, 64.0, x.clone()), 4.0);
        assert_eq!(r.len(), 40);
        for (k, v) in r.iter().enumerate() {
            let oracle = x[k * 16..(k + 1) * 16].iter().sum::<f64>() / 16.0;
            assert!((v - oracle).abs() < 1e-12);
        }
    }

    fn constant_recording(start_shift: [f64; 6], seconds: usize) -> SessionRecording {
        let rates = [32.0, 32.0, 32.0, 64.0, 4.0, 4.0];
        let chans = ChannelName::ALL
            .iter()
            .enumerate()
            .map(|(c, &name)| {
                let rate = rates[c];
                let n = seconds * rate as usize;
                let values = match name {
                    ChannelName::AccZ => vec![1.0; n],
                    ChannelName::AccX | ChannelName::AccY => vec![0.0; n],
                    ChannelName::Bvp => (0..n).map(|i| (2.0 * PI * 1.2 * i as f64 / rate).sin()).collect(),
                    ChannelName::Eda => vec![2.0; n],
                    ChannelName::Temp => vec![33.0; n],
                };
                series(name, 1_600_000_000.0 + start_shift[c], rate, values)
            })
            .collect();
        SessionRecording::new("P1", "S1", chans).unwrap()
    }

    #[test]
    fn aligned_constant_session() {
        let a = align_session(&constant_recording([0.0; 6], 300)).unwrap();
        assert_eq!(a.stream_count(), 9);
        assert_eq!(a.len(), 1200);
        for s in Stream::ALL {
            assert_eq!(a.stream(s).len(), a.len());
        }
        let mid = 200..1000;
        assert!(a.stream(Stream::AccMag)[mid.clone()].iter().all(|v| (v - 1.0).abs() < 1e-6));
        assert!(a.stream(Stream::Hr)[mid.clone()].iter().all(|v| (v - 72.0).abs() < 72.0 * 0.03));
        assert!(a.stream(Stream::EdaTonic).iter().all(|v| (v - 2.0).abs() < 1e-9));
        assert!(a.stream(Stream::Temp).iter().all(|&v| v == 33.0));
        assert!(!a.gap_mask.contains(&true));
        for k in 0..a.len() {
            let recon = a.stream(Stream::EdaPhasic)[k] + a.stream(Stream::EdaTonic)[k];
            assert!((recon - a.eda_smoothed[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn disjoint_channels_fail() {
        let mut shift = [0.0; 6];
        shift[5] = 10_000.0;
        assert!(matches!(
            align_session(&constant_recording(shift, 300)),
            Err(PreprocessError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn staggered_starts_trim_to_common_span() {
        let a = align_session(&constant_recording([0.0, 0.0, 0.0, 2.0, 5.0, 1.0], 300)).unwrap();
        assert_eq!(a.grid_start, 1_600_000_005.0);
        assert_eq!(a.len(), 295 * 4);
    }
}

//! One-minute windowing and the 198-column feature matrix.

pub mod stats;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{LabelClass, LabelSet};
use crate::preprocess::{AlignedSession, Stream, GRID_RATE_HZ};

pub use stats::STAT_NAMES;

/// Windows with more than this share of gap samples yield all-NaN rows.
pub const MAX_GAP_FRACTION: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("session spans {seconds:.1} s, shorter than one {window} s window")]
    NoCompleteWindow { seconds: f64, window: f64 },
    #[error("every column contains non-finite values")]
    AllColumnsInvalid,
    #[error("rows belong to {found}, labels to {expected}")]
    SessionMismatch { expected: String, found: String },
    #[error("invalid window spec: {0}")]
    InvalidWindow(String),
    #[error("malformed feature file {path} at line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_s: f64,
    pub overlap_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { length_s: 60.0, overlap_s: 0.0 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.length_s > 0.0) {
            return Err(FeatureError::InvalidWindow("length must be positive".into()));
        }
        if self.overlap_s != 0.0 {
            return Err(FeatureError::InvalidWindow("windows do not overlap".into()));
        }
        let samples = self.length_s * GRID_RATE_HZ;
        if samples.fract() != 0.0 {
            return Err(FeatureError::InvalidWindow("length must be a whole number of grid samples".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.length_s * GRID_RATE_HZ) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub version: String,
    pub names: Vec<String>,
}

impl Default for FeatureCatalog {
    fn default() -> Self {
        Self { version: "stats22-v1".into(), names: STAT_NAMES.iter().map(|s| s.to_string()).collect() }
    }
}

impl FeatureCatalog {
    pub fn column_names(&self) -> Vec<String> {
        Stream::ALL
            .iter()
            .flat_map(|s| self.names.iter().map(move |n| format!("{}.{}", s.as_str(), n)))
            .collect()
    }
}

/// Statistics of one window in catalog order; gap samples are excluded and
/// windows that are more than half gap give all NaN.
pub fn stat_features(window: &[f64], gaps: &[bool]) -> [f64; 22] {
    let n_gap = gaps.iter().filter(|&&g| g).count();
    if n_gap as f64 > MAX_GAP_FRACTION * window.len() as f64 {
        return [f64::NAN; 22];
    }
    if n_gap == 0 {
        return stats::compute(window);
    }
    let kept: Vec<f64> = window.iter().zip(gaps).filter(|(_, &g)| !g).map(|(&v, _)| v).collect();
    stats::compute(&kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowLabel {
    #[serde(rename = "NORMAL")]
    Normal,
    #[serde(rename = "AGITATION")]
    Agitation,
    #[serde(rename = "UNLABELED")]
    Unlabeled,
}

impl RowLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RowLabel::Normal => "NORMAL",
            RowLabel::Agitation => "AGITATION",
            RowLabel::Unlabeled => "UNLABELED",
        }
    }

    /// Binary target with AGITATION positive.
    pub fn class(self) -> Option<u8> {
        match self {
            RowLabel::Normal => Some(0),
            RowLabel::Agitation => Some(1),
            RowLabel::Unlabeled => None,
        }
    }

    pub fn from_class(c: u8) -> Self {
        if c == 1 {
            RowLabel::Agitation
        } else {
            RowLabel::Normal
        }
    }
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NORMAL" => Ok(RowLabel::Normal),
            "AGITATION" => Ok(RowLabel::Agitation),
            "UNLABELED" => Ok(RowLabel::Unlabeled),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub participant_id: String,
    pub session_id: String,
    pub window_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    pub values: Array2<f64>,
    pub row_meta: Vec<RowMeta>,
    pub row_labels: Vec<RowLabel>,
    /// Columns removed by [`drop_invalid_columns`], in original order.
    pub removed_columns: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        column_names: Vec<String>,
        values: Array2<f64>,
        row_meta: Vec<RowMeta>,
        row_labels: Vec<RowLabel>,
    ) -> Self {
        assert_eq!(values.ncols(), column_names.len());
        assert_eq!(values.nrows(), row_meta.len());
        assert_eq!(values.nrows(), row_labels.len());
        Self { column_names, values, row_meta, row_labels, removed_columns: Vec::new() }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, name: &str) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.column_names.iter().position(|c| c == name).map(|j| self.values.column(j))
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.row_labels {
            match l {
                RowLabel::Normal => c.normal += 1,
                RowLabel::Agitation => c.agitation += 1,
                RowLabel::Unlabeled => c.unlabeled += 1,
            }
        }
        c
    }

    /// Values and classes of the labeled rows, in row order.
    pub fn labeled_xy(&self) -> (Array2<f64>, Vec<u8>) {
        let rows: Vec<usize> = (0..self.nrows()).filter(|&i| self.row_labels[i].class().is_some()).collect();
        let y = rows.iter().map(|&i| self.row_labels[i].class().unwrap()).collect();
        (self.values.select(Axis(0), &rows), y)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            column_names: self.column_names.clone(),
            values: self.values.select(Axis(0), idx),
            row_meta: idx.iter().map(|&i| self.row_meta[i].clone()).collect(),
            row_labels: idx.iter().map(|&i| self.row_labels[i]).collect(),
            removed_columns: self.removed_columns.clone(),
        }
    }

    /// Stack matrices with identical columns.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix, FeatureError> {
        let first = parts.first().ok_or_else(|| FeatureError::ColumnMismatch("nothing to concatenate".into()))?;
        for p in parts {
            if p.column_names != first.column_names {
                return Err(FeatureError::ColumnMismatch("parts have different columns".into()));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        Ok(FeatureMatrix {
            column_names: first.column_names.clone(),
            values,
            row_meta: parts.iter().flat_map(|p| p.row_meta.iter().cloned()).collect(),
            row_labels: parts.iter().flat_map(|p| p.row_labels.iter().copied()).collect(),
            removed_columns: first.removed_columns.clone(),
        })
    }

    /// Keep only `names`, in that order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| FeatureError::ColumnMismatch(format!("missing column {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureMatrix {
            column_names: names.to_vec(),
            values: self.values.select(Axis(1), &idx),
            row_meta: self.row_meta.clone(),
            row_labels: self.row_labels.clone(),
            removed_columns: self.removed_columns.clone(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let io = |source| FeatureError::Io { path: path.to_path_buf(), source };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        let mut line = String::from("participant_id,session_id,window_start,label");
        for c in &self.column_names {
            line.push(',');
            line.push_str(c);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            line.clear();
            let m = &self.row_meta[i];
            line.push_str(&format!("{},{},{},{}", m.participant_id, m.session_id, m.window_start, self.row_labels[i]));
            for v in row {
                line.push_str(&format!(",{v:.16e}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
        let text = fs::read_to_string(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
        let bad = |line: usize, reason: String| FeatureError::Malformed { path: path.to_path_buf(), line, reason };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[..4] != ["participant_id", "session_id", "window_start", "label"] {
            return Err(bad(1, "unexpected header".into()));
        }
        let column_names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
        let k = column_names.len();
        let mut data = Vec::new();
        let mut row_meta = Vec::new();
        let mut row_labels = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != k + 4 {
                return Err(bad(ln + 2, format!("expected {} fields, found {}", k + 4, f.len())));
            }
            let window_start = f[2].parse().map_err(|_| bad(ln + 2, format!("bad window_start {:?}", f[2])))?;
            row_meta.push(RowMeta { participant_id: f[0].into(), session_id: f[1].into(), window_start });
            row_labels.push(f[3].parse().map_err(|e| bad(ln + 2, e))?);
            for v in &f[4..] {
                data.push(v.parse::<f64>().map_err(|_| bad(ln + 2, format!("bad value {v:?}")))?);
            }
        }
        let values = Array2::from_shape_vec((row_meta.len(), k), data).expect("row lengths checked");
        Ok(FeatureMatrix::new(column_names, values, row_meta, row_labels))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub normal: usize,
    pub agitation: usize,
    pub unlabeled: usize,
}

/// Slice the aligned streams into non-overlapping windows and compute every
/// catalog statistic per stream. Rows are unlabeled until
/// [`label_windows`] runs.
pub fn extract_features(
    aligned: &AlignedSession,
    spec: &WindowSpec,
    catalog: &FeatureCatalog,
) -> Result<FeatureMatrix, FeatureError> {
    spec.validate()?;
    let w = spec.samples();
    let n_windows = aligned.len() / w;
    if n_windows == 0 {
        return Err(FeatureError::NoCompleteWindow {
            seconds: aligned.len() as f64 / aligned.grid_rate,
            window: spec.length_s,
        });
    }
    let columns = catalog.column_names();
    let k = columns.len();
    let rows: Vec<Vec<f64>> = (0..n_windows)
        .into_par_iter()
        .map(|i| {
            let range = i * w..(i + 1) * w;
            let gaps = &aligned.gap_mask[range.clone()];
            let mut row = Vec::with_capacity(k);
            for s in Stream::ALL {
                row.extend_from_slice(&stat_features(&aligned.stream(s)[range.clone()], gaps));
            }
            row
        })
        .collect();
    let values = Array2::from_shape_vec((n_windows, k), rows.concat()).expect("fixed row width");
    let row_meta = (0..n_windows)
        .map(|i| RowMeta {
            participant_id: aligned.participant_id.clone(),
            session_id: aligned.session_id.clone(),
            window_start: aligned.time_at(i * w),
        })
        .collect();
    Ok(FeatureMatrix::new(columns, values, row_meta, vec![RowLabel::Unlabeled; n_windows]))
}

/// Remove every column holding a non-finite value.
pub fn drop_invalid_columns(m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    let (keep, removed): (Vec<usize>, Vec<usize>) =
        (0..m.ncols()).partition(|&j| m.values.column(j).iter().all(|v| v.is_finite()));
    if keep.is_empty() {
        return Err(FeatureError::AllColumnsInvalid);
    }
    let mut removed_columns = m.removed_columns.clone();
    removed_columns.extend(removed.iter().map(|&j| m.column_names[j].clone()));
    Ok(FeatureMatrix {
        column_names: keep.iter().map(|&j| m.column_names[j].clone()).collect(),
        values: m.values.select(Axis(1), &keep),
        row_meta: m.row_meta.clone(),
        row_labels: m.row_labels.clone(),
        removed_columns,
    })
}

/// Whether a window of `window_s` seconds starting at `start` has a grid
/// sample inside the half-open span `[span_start, span_end)`.
fn window_hits_span(start: f64, window_s: f64, span_start: f64, span_end: f64) -> bool {
    let n = (window_s * GRID_RATE_HZ) as i64;
    let first = ((span_start - start) * GRID_RATE_HZ).ceil().max(0.0) as i64;
    first < n && start + first as f64 / GRID_RATE_HZ < span_end
}

/// AGITATION if the window touches any agitation span, otherwise NORMAL for
/// fully labeled sessions and UNLABELED for the rest.
pub fn label_windows(m: &FeatureMatrix, labels: &LabelSet, spec: &WindowSpec) -> Result<FeatureMatrix, FeatureError> {
    let expected = format!("{}/{}", labels.participant_id, labels.session_id);
    if let Some(meta) = m
        .row_meta
        .iter()
        .find(|r| r.participant_id != labels.participant_id || r.session_id != labels.session_id)
    {
        return Err(FeatureError::SessionMismatch {
            expected,
            found: format!("{}/{}", meta.participant_id, meta.session_id),
        });
    }
    let agitation: Vec<_> = labels.spans.iter().filter(|s| s.class == LabelClass::Agitation).collect();
    let row_labels = m
        .row_meta
        .iter()
        .map(|r| {
            if agitation.iter().any(|s| window_hits_span(r.window_start, spec.length_s, s.start, s.end)) {
                RowLabel::Agitation
            } else if labels.fully_labeled {
                RowLabel::Normal
            } else {
                RowLabel::Unlabeled
            }
        })
        .collect();
    Ok(FeatureMatrix { row_labels, ..m.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::LabelSpan;

    fn aligned(minutes: f64, temp: f64) -> AlignedSession {
        let n = (minutes * 60.0 * GRID_RATE_HZ) as usize;
        let streams = Stream::ALL
            .iter()
            .map(|&s| match s {
                Stream::Temp => vec![temp; n],
                _ => (0..n).map(|i| ((i * (s.index() + 3)) as f64 * 0.01).sin()).collect(),
            })
            .collect();
        AlignedSession::from_streams("P1", "S1", 1000.0, streams, vec![false; n])
    }

    #[test]
    fn shape_and_partial_window() {
        let spec = WindowSpec::default();
        let cat = FeatureCatalog::default();
        let m = extract_features(&aligned(10.0, 33.0), &spec, &cat).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (10, 198));
        let m = extract_features(&aligned(10.5, 33.0), &spec, &cat).unwrap();
        assert_eq!(m.nrows(), 10);
        assert!(m.column("TEMP.mean").unwrap().iter().all(|&v| v == 33.0));
        assert!(matches!(
            extract_features(&aligned(0.5, 33.0), &spec, &cat),
            Err(FeatureError::NoCompleteWindow { .. })
        ));
    }

    #[test]
    fn column_naming() {
        let names = FeatureCatalog::default().column_names();
        assert_eq!(names.len(), 198);
        assert_eq!(names[0], "ACC_X.mean");
        assert_eq!(names[197], "TEMP.svd_entropy");
        for s in Stream::ALL {
            assert_eq!(names.iter().filter(|n| n.starts_with(&format!("{}.", s.as_str()))).count(), 22);
        }
    }

    #[test]
    fn gap_heavy_window_is_nan() {
        let x = vec![1.0; 240];
        let mut gaps = vec![false; 240];
        gaps[..121].fill(true);
        assert!(stat_features(&x, &gaps).iter().all(|v| v.is_nan()));
        gaps[120] = false;
        assert_eq!(stat_features(&x, &gaps)[5], 120.0);
    }

    #[test]
    fn drop_removes_nan_column_only() {
        let m = extract_features(&aligned(3.0, 33.0), &WindowSpec::default(), &FeatureCatalog::default()).unwrap();
        let d = drop_invalid_columns(&m).unwrap();
        // Constant TEMP: zero-variance skewness and kurtosis.
        assert_eq!(d.removed_columns, vec!["TEMP.skewness".to_string(), "TEMP.kurtosis".to_string()]);
        assert_eq!(d.ncols(), 196);
        let again = drop_invalid_columns(&d).unwrap();
        assert_eq!(again.values, d.values);

        let all_nan = FeatureMatrix::new(
            vec!["a".into()],
            Array2::from_elem((2, 1), f64::NAN),
            d.row_meta[..2].to_vec(),
            vec![RowLabel::Unlabeled; 2],
        );
        assert!(matches!(drop_invalid_columns(&all_nan), Err(FeatureError::AllColumnsInvalid)));
    }

    #[test]
    fn labeling_rules() {
        let spec = WindowSpec::default();
        let m = extract_features(&aligned(10.0, 33.0), &spec, &FeatureCatalog::default()).unwrap();
        let span = LabelSpan { start: 1000.0 + 300.0, end: 1000.0 + 420.0, class: LabelClass::Agitation };
        let full = LabelSet::new("P1", "S1", vec![span], true).unwrap();
        let l = label_windows(&m, &full, &spec).unwrap();
        let expect: Vec<RowLabel> = (0..10)
            .map(|i| if i == 5 || i == 6 { RowLabel::Agitation } else { RowLabel::Normal })
            .collect();
        assert_eq!(l.row_labels, expect);

        let none = LabelSet::new("P1", "S1", vec![], false).unwrap();
        let l = label_windows(&m, &none, &spec).unwrap();
        assert!(l.row_labels.iter().all(|&r| r == RowLabel::Unlabeled));

        let other = LabelSet::new("P2", "S1", vec![], false).unwrap();
        assert!(matches!(label_windows(&m, &other, &spec), Err(FeatureError::SessionMismatch { .. })));
    }

    #[test]
    fn quarter_second_overlap_counts() {
        // Span touching only the last grid sample of window 0.
        assert!(window_hits_span(0.0, 60.0, 59.75, 70.0));
        assert!(!window_hits_span(0.0, 60.0, 60.0, 70.0));
        // Span strictly between two grid samples.
        assert!(!window_hits_span(0.0, 60.0, 10.1, 10.2));
    }
}

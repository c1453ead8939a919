//! Wristband session archives and nurse label files.
//!
//! An archive is a directory holding `ACC.csv`, `BVP.csv`, `EDA.csv` and
//! `TEMP.csv` in the Empatica export layout: row 1 is the start unix
//! timestamp (repeated per column), row 2 the sample rate in Hz, and every
//! following row one sample. Accelerometer samples are raw counts with
//! 64 counts per g. `IBI.csv` and `tags.csv` are ignored if present.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Raw accelerometer counts per g.
pub const ACC_COUNTS_PER_G: f64 = 64.0;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing channel file {path}")]
    MissingChannel { path: PathBuf },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("non-monotonic data in {path}: {reason}")]
    NonMonotonicData { path: PathBuf, reason: String },
    #[error("invalid span at line {line}: end {end} <= start {start}")]
    InvalidSpan { line: usize, start: f64, end: f64 },
    #[error("NORMAL span [{normal_start}, {normal_end}) overlaps an AGITATION span")]
    OverlapConflict { normal_start: f64, normal_end: f64 },
    #[error("malformed label file {path} at line {line}: {reason}")]
    MalformedLabels { path: PathBuf, line: usize, reason: String },
    #[error("session is missing channel {0}")]
    IncompleteSession(ChannelName),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelName {
    #[serde(rename = "ACC_X")]
    AccX,
    #[serde(rename = "ACC_Y")]
    AccY,
    #[serde(rename = "ACC_Z")]
    AccZ,
    #[serde(rename = "BVP")]
    Bvp,
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "TEMP")]
    Temp,
}

impl ChannelName {
    pub const ALL: [ChannelName; 6] = [
        ChannelName::AccX,
        ChannelName::AccY,
        ChannelName::AccZ,
        ChannelName::Bvp,
        ChannelName::Eda,
        ChannelName::Temp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelName::AccX => "ACC_X",
            ChannelName::AccY => "ACC_Y",
            ChannelName::AccZ => "ACC_Z",
            ChannelName::Bvp => "BVP",
            ChannelName::Eda => "EDA",
            ChannelName::Temp => "TEMP",
        }
    }
}

impl fmt::Display for ChannelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One uniformly sampled channel.
///
/// `values` is always finite. Entries that could not be parsed are listed in
/// `gaps` and hold the last valid value (or the first valid one at the very
/// start) so that downstream filters see a continuous signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub name: ChannelName,
    pub start_time: f64,
    pub sample_rate: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub gaps: Vec<usize>,
}

impl ChannelSeries {
    pub fn new(name: ChannelName, start_time: f64, sample_rate: f64, values: Vec<f64>) -> Self {
        Self { name, start_time, sample_rate, values, gaps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration()
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn gap_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.values.len()];
        for &g in &self.gaps {
            if g < flags.len() {
                flags[g] = true;
            }
        }
        flags
    }

    fn from_raw(name: ChannelName, start_time: f64, sample_rate: f64, raw: Vec<Option<f64>>) -> Self {
        let first_valid = raw.iter().flatten().copied().next().unwrap_or(0.0);
        let mut last = first_valid;
        let mut gaps = Vec::new();
        let values = raw
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(v) => {
                    last = v;
                    v
                }
                None => {
                    gaps.push(i);
                    last
                }
            })
            .collect();
        Self { name, start_time, sample_rate, values, gaps }
    }
}

/// One participant-session with all six required channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecording {
    pub participant_id: String,
    pub session_id: String,
    channels: Vec<ChannelSeries>,
}

impl SessionRecording {
    pub fn new(
        participant_id: impl Into<String>,
        session_id: impl Into<String>,
        mut channels: Vec<ChannelSeries>,
    ) -> Result<Self, IngestError> {
        channels.sort_by_key(|c| c.name);
        channels.dedup_by_key(|c| c.name);
        for name in ChannelName::ALL {
            if !channels.iter().any(|c| c.name == name) {
                return Err(IngestError::IncompleteSession(name));
            }
        }
        Ok(Self { participant_id: participant_id.into(), session_id: session_id.into(), channels })
    }

    pub fn channel(&self, name: ChannelName) -> &ChannelSeries {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .expect("constructor guarantees every channel")
    }

    pub fn channels(&self) -> &[ChannelSeries] {
        &self.channels
    }

    /// Intersection of all channel time spans, if non-empty.
    pub fn common_span(&self) -> Option<(f64, f64)> {
        let start = self.channels.iter().map(|c| c.start_time).fold(f64::NEG_INFINITY, f64::max);
        let end = self.channels.iter().map(|c| c.end_time()).fold(f64::INFINITY, f64::min);
        (end > start).then_some((start, end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    #[serde(rename = "NORMAL")]
    Normal,
    #[serde(rename = "AGITATION")]
    Agitation,
}

impl LabelClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelClass::Normal => "NORMAL",
            LabelClass::Agitation => "AGITATION",
        }
    }
}

impl FromStr for LabelClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "NORMAL" => Ok(LabelClass::Normal),
            "AGITATION" => Ok(LabelClass::Agitation),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

/// Half-open interval `[start, end)` in unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start: f64,
    pub end: f64,
    pub class: LabelClass,
}

impl LabelSpan {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    fn overlaps(&self, other: &LabelSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub participant_id: String,
    pub session_id: String,
    pub spans: Vec<LabelSpan>,
    pub fully_labeled: bool,
}

impl LabelSet {
    /// Sort spans, merge overlapping same-class spans and reject
    /// NORMAL/AGITATION overlaps.
    pub fn new(
        participant_id: impl Into<String>,
        session_id: impl Into<String>,
        spans: Vec<LabelSpan>,
        fully_labeled: bool,
    ) -> Result<Self, IngestError> {
        for (i, s) in spans.iter().enumerate() {
            if !(s.end > s.start) {
                return Err(IngestError::InvalidSpan { line: i + 1, start: s.start, end: s.end });
            }
        }
        let mut merged = Vec::with_capacity(spans.len());
        for class in [LabelClass::Normal, LabelClass::Agitation] {
            let mut same: Vec<LabelSpan> = spans.iter().filter(|s| s.class == class).copied().collect();
            same.sort_by(|a, b| a.start.total_cmp(&b.start));
            let mut cur: Option<LabelSpan> = None;
            for s in same {
                cur = match cur {
                    Some(mut c) if s.start < c.end => {
                        c.end = c.end.max(s.end);
                        Some(c)
                    }
                    Some(c) => {
                        merged.push(c);
                        Some(s)
                    }
                    None => Some(s),
                };
            }
            merged.extend(cur);
        }
        merged.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        for w in merged.windows(2) {
            if w[0].overlaps(&w[1]) {
                let normal = if w[0].class == LabelClass::Normal { w[0] } else { w[1] };
                return Err(IngestError::OverlapConflict {
                    normal_start: normal.start,
                    normal_end: normal.end,
                });
            }
        }
        Ok(Self {
            participant_id: participant_id.into(),
            session_id: session_id.into(),
            spans: merged,
            fully_labeled,
        })
    }

    pub fn agitation_seconds(&self) -> f64 {
        self.spans
            .iter()
            .filter(|s| s.class == LabelClass::Agitation)
            .map(LabelSpan::duration)
            .sum()
    }
}

fn channel_files() -> [(&'static str, &'static [ChannelName]); 4] {
    [
        ("ACC.csv", &[ChannelName::AccX, ChannelName::AccY, ChannelName::AccZ]),
        ("BVP.csv", &[ChannelName::Bvp]),
        ("EDA.csv", &[ChannelName::Eda]),
        ("TEMP.csv", &[ChannelName::Temp]),
    ]
}

fn parse_header_row(path: &Path, line: Option<&str>, what: &str, ncols: usize) -> Result<f64, IngestError> {
    let malformed = |reason: String| IngestError::MalformedHeader { path: path.to_path_buf(), reason };
    let line = line.ok_or_else(|| malformed(format!("missing {what} row")))?;
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != ncols {
        return Err(malformed(format!("{what} row has {} columns, expected {ncols}", fields.len())));
    }
    let first: f64 = fields[0]
        .parse()
        .map_err(|_| malformed(format!("{what} {:?} is not a number", fields[0])))?;
    if !first.is_finite() {
        return Err(malformed(format!("{what} is not finite")));
    }
    for f in &fields[1..] {
        let v: f64 = f.parse().map_err(|_| malformed(format!("{what} {f:?} is not a number")))?;
        if v != first {
            return Err(malformed(format!("{what} differs between columns")));
        }
    }
    Ok(first)
}

fn parse_sample(field: &str) -> Option<f64> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parse one Empatica-style session directory.
///
/// Participant and session ids are taken from the directory name
/// (`<participant>_<session>`), falling back to the whole name for both.
pub fn parse_e4_archive(dir: &Path) -> Result<SessionRecording, IngestError> {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("unknown");
    let (participant, session) = match name.split_once('_') {
        Some((p, s)) => (p.to_string(), s.to_string()),
        None => (name.to_string(), name.to_string()),
    };
    let mut channels = Vec::with_capacity(6);
    for (file, names) in channel_files() {
        let path = dir.join(file);
        if !path.is_file() {
            return Err(IngestError::MissingChannel { path });
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut lines = text.lines();
        let start = parse_header_row(&path, lines.next(), "start timestamp", names.len())?;
        let rate = parse_header_row(&path, lines.next(), "sample rate", names.len())?;
        if rate < 0.0 {
            return Err(IngestError::NonMonotonicData {
                path,
                reason: format!("negative sample rate {rate}"),
            });
        }
        if rate == 0.0 {
            return Err(IngestError::MalformedHeader { path, reason: "zero sample rate".into() });
        }
        let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for line in lines {
            let mut fields = line.split(',');
            for col in raw.iter_mut() {
                col.push(fields.next().and_then(parse_sample));
            }
        }
        for (col, &ch) in raw.into_iter().zip(names) {
            let scale = if names.len() == 3 { 1.0 / ACC_COUNTS_PER_G } else { 1.0 };
            let col = col.into_iter().map(|v| v.map(|v| v * scale)).collect();
            channels.push(ChannelSeries::from_raw(ch, start, rate, col));
        }
    }
    SessionRecording::new(participant, session, channels)
}

fn format_sample(v: f64, gap: bool) -> String {
    if gap {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Write a recording in the archive layout read by [`parse_e4_archive`].
pub fn write_e4_archive(rec: &SessionRecording, dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (file, names) in channel_files() {
        let path = dir.join(file);
        let series: Vec<&ChannelSeries> = names.iter().map(|&n| rec.channel(n)).collect();
        let scale = if names.len() == 3 { ACC_COUNTS_PER_G } else { 1.0 };
        let gaps: Vec<Vec<bool>> = series.iter().map(|s| s.gap_flags()).collect();
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        let row = |v: f64| vec![format!("{v}"); names.len()].join(",");
        let mut out = String::new();
        out.push_str(&row(series[0].start_time));
        out.push('\n');
        out.push_str(&row(series[0].sample_rate));
        out.push('\n');
        w.write_all(out.as_bytes()).map_err(io_err(&path))?;
        let n = series.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut line = String::new();
        for i in 0..n {
            line.clear();
            for (c, s) in series.iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                let gap = gaps[c].get(i).copied().unwrap_or(true);
                let v = s.values.get(i).copied().unwrap_or(0.0) * scale;
                line.push_str(&format_sample(v, gap));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}

const LABEL_HEADER: &str = "participant_id,session_id,fully_labeled";
const SPAN_HEADER: &str = "start_unix,end_unix,class";

/// Parse a label file.
///
/// The first line is the `participant_id,session_id,fully_labeled` header;
/// the next line holds those three values, then optionally the
/// `start_unix,end_unix,class` header, then one span per line. A file whose
/// first line already holds the values (no literal header) is accepted too.
pub fn parse_labels(path: &Path) -> Result<LabelSet, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |line: usize, reason: String| IngestError::MalformedLabels {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (mut ln, mut first) = lines.next().ok_or_else(|| malformed(1, "empty file".into()))?;
    if first.trim() == LABEL_HEADER {
        (ln, first) = lines.next().ok_or_else(|| malformed(2, "missing session line".into()))?;
    }
    let meta: Vec<&str> = first.split(',').map(str::trim).collect();
    if meta.len() != 3 {
        return Err(malformed(ln + 1, "expected participant_id,session_id,fully_labeled".into()));
    }
    let fully_labeled = meta[2]
        .parse::<bool>()
        .map_err(|_| malformed(ln + 1, format!("fully_labeled {:?} is not true/false", meta[2])))?;
    let mut spans = Vec::new();
    for (ln, line) in lines {
        if line.trim() == SPAN_HEADER {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(malformed(ln + 1, "expected start_unix,end_unix,class".into()));
        }
        let start: f64 = f[0].parse().map_err(|_| malformed(ln + 1, format!("bad start {:?}", f[0])))?;
        let end: f64 = f[1].parse().map_err(|_| malformed(ln + 1, format!("bad end {:?}", f[1])))?;
        let class: LabelClass = f[2].parse().map_err(|e| malformed(ln + 1, e))?;
        if !(end > start) {
            return Err(IngestError::InvalidSpan { line: ln + 1, start, end });
        }
        spans.push(LabelSpan { start, end, class });
    }
    LabelSet::new(meta[0], meta[1], spans, fully_labeled)
}

pub fn write_labels(labels: &LabelSet, path: &Path) -> Result<(), IngestError> {
    let mut out = format!(
        "{LABEL_HEADER}\n{},{},{}\n{SPAN_HEADER}\n",
        labels.participant_id, labels.session_id, labels.fully_labeled
    );
    for s in &labels.spans {
        out.push_str(&format!("{},{},{}\n", s.start, s.end, s.class.as_str()));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGap {
    pub channel: ChannelName,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    pub span_index: usize,
    pub seconds_outside: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub participant_id: String,
    pub session_id: String,
    pub common_start: Option<f64>,
    pub common_end: Option<f64>,
    /// Runs of gap-marked samples, plus the parts of each channel's span
    /// that fall outside the common span.
    pub coverage_gaps: Vec<CoverageGap>,
    pub misalignments: Vec<Misalignment>,
    pub usable_minutes: f64,
}

/// Report-only consistency check between a recording and its labels.
pub fn validate_session(rec: &SessionRecording, labels: &LabelSet) -> ValidationReport {
    let common = rec.common_span();
    let mut coverage_gaps = Vec::new();
    for ch in rec.channels() {
        let flags = ch.gap_flags();
        let mut i = 0;
        while i < flags.len() {
            if flags[i] {
                let j = flags[i..].iter().position(|&g| !g).map_or(flags.len(), |k| i + k);
                coverage_gaps.push(CoverageGap { channel: ch.name, start: ch.time_at(i), end: ch.time_at(j) });
                i = j;
            } else {
                i += 1;
            }
        }
        if let Some((cs, ce)) = common {
            if ch.start_time < cs {
                coverage_gaps.push(CoverageGap { channel: ch.name, start: ch.start_time, end: cs });
            }
            if ch.end_time() > ce {
                coverage_gaps.push(CoverageGap { channel: ch.name, start: ce, end: ch.end_time() });
            }
        }
    }
    let (cs, ce) = common.unwrap_or((f64::NAN, f64::NAN));
    let misalignments = labels
        .spans
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let outside = if common.is_none() {
                s.duration()
            } else {
                let inside = (s.end.min(ce) - s.start.max(cs)).max(0.0);
                s.duration() - inside
            };
            (outside > 0.0).then_some(Misalignment { span_index: i, seconds_outside: outside })
        })
        .collect();
    ValidationReport {
        participant_id: rec.participant_id.clone(),
        session_id: rec.session_id.clone(),
        common_start: common.map(|c| c.0),
        common_end: common.map(|c| c.1),
        coverage_gaps,
        misalignments,
        usable_minutes: common.map_or(0.0, |(s, e)| (e - s) / 60.0),
    }
}

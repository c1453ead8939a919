//! Deterministic synthetic cohort in the wristband archive format.
//!
//! Signal model, per session:
//!
//! * BVP (64 Hz): phase-accumulated pulse wave whose rate follows a
//!   per-second heart-rate trace (baseline + slow drift + AR(1) jitter).
//! * ACC (32 Hz, 1/64 g counts): gravity plus white noise.
//! * EDA (4 Hz): tonic level drifting between 1 and 4 uS with sparse
//!   skin-conductance bumps.
//! * TEMP (4 Hz): 33 C with a +-0.3 C slow drift.
//!
//! Agitation episodes raise heart rate, ACC variance, bump rate and skin
//! temperature. Activity bouts in normal time raise heart rate and ACC
//! variance only, so movement alone does not give the label away.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{self, ChannelName, ChannelSeries, IngestError, LabelClass, LabelSet, LabelSpan, SessionRecording};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("episodes overlap: [{0}, {1}) and [{2}, {3})")]
    OverlappingEpisodes(f64, f64, f64, f64),
    #[error("episode [{start}, {end}) invalid for a {duration} s session")]
    EpisodeOutOfRange { start: f64, end: f64, duration: f64 },
    #[error("infeasible cohort targets: {0}")]
    InfeasibleTargets(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const MIN_EPISODE_S: f64 = 120.0;
pub const MAX_EPISODE_S: f64 = 217.0 * 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    /// Offset from the session start, seconds.
    pub start_s: f64,
    pub duration_s: f64,
    pub hr_delta: f64,
    pub acc_var_multiplier: f64,
    /// Bumps per minute during the episode.
    pub eda_burst_rate: f64,
    pub temp_delta: f64,
}

impl EpisodeSpec {
    pub fn new(start_s: f64, duration_s: f64) -> Self {
        Self { start_s, duration_s, hr_delta: 25.0, acc_var_multiplier: 5.0, eda_burst_rate: 4.0, temp_delta: 0.3 }
    }

    /// Default episode with every delta scaled by `k` (1 gives the defaults).
    pub fn scaled(start_s: f64, duration_s: f64, k: f64) -> Self {
        let d = Self::new(start_s, duration_s);
        let base = Baseline::default().eda_burst_rate;
        Self {
            hr_delta: d.hr_delta * k,
            acc_var_multiplier: 1.0 + (d.acc_var_multiplier - 1.0) * k,
            eda_burst_rate: base + (d.eda_burst_rate - base) * k,
            temp_delta: d.temp_delta * k,
            ..d
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Non-agitated movement: higher heart rate and ACC variance only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityBout {
    pub start_s: f64,
    pub duration_s: f64,
    pub hr_delta: f64,
    pub acc_var_multiplier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub heart_rate_bpm: f64,
    pub acc_noise_g: f64,
    pub eda_tonic_low: f64,
    pub eda_tonic_high: f64,
    /// Bumps per minute outside episodes.
    pub eda_burst_rate: f64,
    pub temp_c: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Self {
            heart_rate_bpm: 70.0,
            acc_noise_g: 0.02,
            eda_tonic_low: 1.0,
            eda_tonic_high: 4.0,
            eda_burst_rate: 1.0,
            temp_c: 33.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub participant_id: String,
    pub session_id: String,
    pub start_time: f64,
    pub duration_s: f64,
    /// Whether the label file marks the session fully labeled and lists the
    /// episodes. Unlabeled sessions still contain their episodes.
    pub fully_labeled: bool,
    pub episodes: Vec<EpisodeSpec>,
    pub bouts: Vec<ActivityBout>,
    pub baseline: Baseline,
}

impl SessionSpec {
    pub fn new(participant_id: &str, session_id: &str, duration_s: f64, episodes: Vec<EpisodeSpec>) -> Self {
        Self {
            participant_id: participant_id.into(),
            session_id: session_id.into(),
            start_time: 1_600_000_000.0,
            duration_s,
            fully_labeled: true,
            episodes,
            bouts: Vec::new(),
            baseline: Baseline::default(),
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        let mut eps: Vec<&EpisodeSpec> = self.episodes.iter().collect();
        eps.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for e in &eps {
            if e.start_s < 0.0 || e.end_s() > self.duration_s || !(MIN_EPISODE_S..=MAX_EPISODE_S).contains(&e.duration_s) {
                return Err(SynthError::EpisodeOutOfRange { start: e.start_s, end: e.end_s(), duration: self.duration_s });
            }
        }
        for w in eps.windows(2) {
            if w[1].start_s < w[0].end_s() {
                return Err(SynthError::OverlappingEpisodes(w[0].start_s, w[0].end_s(), w[1].start_s, w[1].end_s()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSession {
    pub recording: SessionRecording,
    pub labels: LabelSet,
    pub spec: SessionSpec,
}

/// Per-second drivers of the signal model.
struct Profile {
    hr: Vec<f64>,
    acc_sigma: Vec<f64>,
    burst_rate: Vec<f64>,
    temp_target: Vec<f64>,
}

fn profile(spec: &SessionSpec, rng: &mut ChaCha8Rng) -> Profile {
    let n = spec.duration_s.ceil() as usize;
    let b = &spec.baseline;
    let period = rng.random_range(2.0..4.0) * 3600.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let jitter = Normal::new(0.0, 1.0).unwrap();
    let mut j = 0.0;
    let mut hr = Vec::with_capacity(n);
    for t in 0..n {
        j = 0.9 * j + jitter.sample(rng);
        hr.push(b.heart_rate_bpm + 4.0 * (2.0 * PI * t as f64 / period + phase).sin() + j);
    }
    let mut acc_sigma = vec![b.acc_noise_g; n];
    let mut burst_rate = vec![b.eda_burst_rate; n];
    let mut temp_target = vec![0.0; n];
    let span = |start: f64, dur: f64| (start as usize).min(n)..((start + dur) as usize).min(n);
    for bout in &spec.bouts {
        for t in span(bout.start_s, bout.duration_s) {
            hr[t] += bout.hr_delta;
            acc_sigma[t] = b.acc_noise_g * bout.acc_var_multiplier.sqrt();
        }
    }
    for e in &spec.episodes {
        for t in span(e.start_s, e.duration_s) {
            hr[t] += e.hr_delta;
            acc_sigma[t] = b.acc_noise_g * e.acc_var_multiplier.sqrt();
            burst_rate[t] = e.eda_burst_rate;
            temp_target[t] = e.temp_delta;
        }
    }
    Profile { hr, acc_sigma, burst_rate, temp_target }
}

fn at_second(v: &[f64], t: f64) -> f64 {
    v[(t as usize).min(v.len() - 1)]
}

fn bvp(p: &Profile, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 2.0).unwrap();
    let amp = rng.random_range(30.0..60.0);
    let mut phi = rng.random_range(0.0..2.0 * PI);
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            // Linear interpolation of the per-second rate keeps the phase smooth.
            let k = (t.floor() as usize).min(p.hr.len() - 1);
            let frac = t - t.floor();
            let hr = p.hr[k] * (1.0 - frac) + p.hr[(k + 1).min(p.hr.len() - 1)] * frac;
            phi += 2.0 * PI * hr / 60.0 / fs;
            amp * (phi.sin() + 0.35 * (2.0 * phi - 0.6).sin()) + noise.sample(rng)
        })
        .collect()
}

fn acc(p: &Profile, n: usize, fs: f64, gravity: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let unit = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let v = gravity + at_second(&p.acc_sigma, i as f64 / fs) * unit.sample(rng);
            (v * 64.0).round() / 64.0
        })
        .collect()
}

fn eda(spec: &SessionSpec, p: &Profile, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = &spec.baseline;
    let period = rng.random_range(4.0..6.0) * 3600.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let s = 0.5 + 0.5 * (2.0 * PI * i as f64 / fs / period + phase).sin();
            b.eda_tonic_low + (b.eda_tonic_high - b.eda_tonic_low) * s
        })
        .collect();
    // Bi-exponential bump, peak normalized to one.
    let (rise, decay) = (0.75, 4.0);
    let shape: Vec<f64> = (0..(20.0 * fs) as usize)
        .map(|k| {
            let t = k as f64 / fs;
            (-t / decay).exp() - (-t / rise).exp()
        })
        .collect();
    let peak = shape.iter().copied().fold(0.0, f64::max);
    let seconds = (n as f64 / fs).ceil() as usize;
    for s in 0..seconds {
        if rng.random::<f64>() < p.burst_rate[s.min(p.burst_rate.len() - 1)] / 60.0 {
            let a = rng.random_range(0.05..0.3) / peak;
            let start = (s as f64 * fs) as usize;
            for (k, v) in shape.iter().enumerate() {
                if let Some(slot) = x.get_mut(start + k) {
                    *slot += a * v;
                }
            }
        }
    }
    let noise = Normal::new(0.0, 0.003).unwrap();
    x.iter_mut().for_each(|v| *v = (*v + noise.sample(rng)).max(0.01));
    x
}

fn temp(spec: &SessionSpec, p: &Profile, n: usize, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = rng.random_range(1.5..3.0) * 3600.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, 0.01).unwrap();
    // First-order approach to the episode offset, 60 s time constant.
    let alpha = 1.0 - (-1.0 / (60.0 * fs)).exp();
    let mut offset = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            offset += alpha * (at_second(&p.temp_target, t) - offset);
            spec.baseline.temp_c + 0.3 * (2.0 * PI * t / period + phase).sin() + offset + noise.sample(rng)
        })
        .collect()
}

/// Generate one session. A pure function of `seed` and `spec`.
pub fn generate_session(seed: u64, spec: &SessionSpec) -> Result<SynthSession, SynthError> {
    spec.check()?;
    let stream = |name: &str| seed::rng(seed::derive_named(seed, name));
    let p = profile(spec, &mut stream("profile"));
    let samples = |fs: f64| (spec.duration_s * fs).round() as usize;
    let t0 = spec.start_time;

    let mut g_rng = stream("gravity");
    let tilt: [f64; 2] = [g_rng.random_range(-0.3..0.3), g_rng.random_range(-0.3..0.3)];
    let gz = (1.0 - tilt[0] * tilt[0] - tilt[1] * tilt[1]).sqrt();
    let gravity = [tilt[0], tilt[1], gz];

    let channels = vec![
        ChannelSeries::new(ChannelName::AccX, t0, 32.0, acc(&p, samples(32.0), 32.0, gravity[0], &mut stream("acc_x"))),
        ChannelSeries::new(ChannelName::AccY, t0, 32.0, acc(&p, samples(32.0), 32.0, gravity[1], &mut stream("acc_y"))),
        ChannelSeries::new(ChannelName::AccZ, t0, 32.0, acc(&p, samples(32.0), 32.0, gravity[2], &mut stream("acc_z"))),
        ChannelSeries::new(ChannelName::Bvp, t0, 64.0, bvp(&p, samples(64.0), 64.0, &mut stream("bvp"))),
        ChannelSeries::new(ChannelName::Eda, t0, 4.0, eda(spec, &p, samples(4.0), 4.0, &mut stream("eda"))),
        ChannelSeries::new(ChannelName::Temp, t0, 4.0, temp(spec, &p, samples(4.0), 4.0, &mut stream("temp"))),
    ];
    let recording = SessionRecording::new(&spec.participant_id, &spec.session_id, channels)?;
    let spans = if spec.fully_labeled {
        spec.episodes
            .iter()
            .map(|e| LabelSpan { start: t0 + e.start_s, end: t0 + e.end_s(), class: LabelClass::Agitation })
            .collect()
    } else {
        Vec::new()
    };
    let labels = LabelSet::new(&spec.participant_id, &spec.session_id, spans, spec.fully_labeled)?;
    Ok(SynthSession { recording, labels, spec: spec.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_participants: usize,
    pub n_labeled: usize,
    /// Minutes of normal and agitation time over the labeled sessions.
    pub normal_minutes: f64,
    pub agitation_minutes: f64,
    /// Minutes of unlabeled sessions; they hide agitation episodes at the
    /// labeled sessions' agitation rate.
    pub unlabeled_minutes: f64,
    pub min_episode_minutes: usize,
    pub max_episode_minutes: usize,
    pub bouts_per_hour: f64,
    /// Each planned episode scales the default episode deltas by a factor
    /// drawn from this range, so some episodes are barely visible.
    pub min_intensity: f64,
    pub max_intensity: f64,
    pub seed: u64,
}

/// Minutes per class in the reference cohort; the default is a tenth.
pub const REFERENCE_MINUTES: [f64; 3] = [18804.0, 1475.0, 37463.0];

impl Default for CohortSpec {
    fn default() -> Self {
        Self::at_scale(0.1, 0)
    }
}

impl CohortSpec {
    pub fn at_scale(scale: f64, seed: u64) -> Self {
        Self {
            n_participants: 14,
            n_labeled: 5,
            normal_minutes: REFERENCE_MINUTES[0] * scale,
            agitation_minutes: REFERENCE_MINUTES[1] * scale,
            unlabeled_minutes: REFERENCE_MINUTES[2] * scale,
            min_episode_minutes: 2,
            max_episode_minutes: 12,
            bouts_per_hour: 2.0,
            min_intensity: 0.4,
            max_intensity: 1.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InfeasibleTargets(m));
        if self.n_labeled == 0 || self.n_labeled > self.n_participants {
            return bad(format!("n_labeled {} must lie in 1..={}", self.n_labeled, self.n_participants));
        }
        if !(self.normal_minutes > 0.0 && self.agitation_minutes > 0.0 && self.unlabeled_minutes >= 0.0) {
            return bad("minute targets must be positive".into());
        }
        if self.min_episode_minutes < 2 || self.max_episode_minutes > 217 || self.min_episode_minutes > self.max_episode_minutes {
            return bad("episode length bounds must lie within [2, 217] minutes".into());
        }
        if !(self.min_intensity > 0.0 && self.min_intensity <= self.max_intensity) {
            return bad("intensity range must be positive and ordered".into());
        }
        if self.n_participants == self.n_labeled && self.unlabeled_minutes > 0.0 {
            return bad("unlabeled minutes need at least one unlabeled participant".into());
        }
        Ok(())
    }
}

/// Split `total` into `parts` integers differing by at most one.
fn even_parts(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Random episode lengths in `[lo, hi]` minutes summing to `total`.
fn episode_lengths(total: usize, lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, SynthError> {
    if total == 0 {
        return Ok(Vec::new());
    }
    if total < lo {
        return Err(SynthError::InfeasibleTargets(format!("{total} agitation minutes is below the {lo}-minute minimum")));
    }
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let d = if left <= hi {
            left
        } else {
            // Never leave a remainder shorter than the minimum.
            rng.random_range(lo..=hi.min(left - lo))
        };
        out.push(d);
        left -= d;
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum Block {
    Episode(usize),
    Bout(usize),
}

/// Seeded session layouts for the whole cohort.
pub fn plan_cohort(spec: &CohortSpec) -> Result<Vec<SessionSpec>, SynthError> {
    spec.validate()?;
    let n_unlabeled = spec.n_participants - spec.n_labeled;
    let normal = even_parts(spec.normal_minutes.round() as usize, spec.n_labeled);
    let agitation = even_parts(spec.agitation_minutes.round() as usize, spec.n_labeled);
    let unlabeled = even_parts(spec.unlabeled_minutes.round() as usize, n_unlabeled.max(1));
    let rate = spec.agitation_minutes / (spec.agitation_minutes + spec.normal_minutes);
    let margin = 2usize;
    let mut plans = Vec::with_capacity(spec.n_participants);
    for i in 0..spec.n_participants {
        let mut rng = seed::rng(seed::derive(seed::derive_named(spec.seed, "plan"), i as u64));
        let labeled = i < spec.n_labeled;
        let (minutes, aa) = if labeled {
            (normal[i] + agitation[i], agitation[i])
        } else {
            let m = unlabeled[i - spec.n_labeled];
            (m, (m as f64 * rate).round() as usize)
        };
        let lengths = episode_lengths(aa, spec.min_episode_minutes, spec.max_episode_minutes, &mut rng)?;
        let n_bouts = (minutes as f64 / 60.0 * spec.bouts_per_hour).round() as usize;
        let bout_lengths: Vec<usize> = (0..n_bouts).map(|_| rng.random_range(2..=8)).collect();
        let mut blocks: Vec<Block> = (0..lengths.len()).map(Block::Episode).chain((0..n_bouts).map(Block::Bout)).collect();
        blocks.shuffle(&mut rng);
        let len_of = |b: &Block| match *b {
            Block::Episode(k) => lengths[k],
            Block::Bout(k) => bout_lengths[k],
        };
        let used: usize = blocks.iter().map(len_of).sum::<usize>() + margin * (blocks.len() + 1);
        let Some(extra) = minutes.checked_sub(used) else {
            return Err(SynthError::InfeasibleTargets(format!("{minutes} minutes cannot hold the planned episodes")));
        };
        // Random composition of the slack into blocks + 1 gaps.
        let mut cuts: Vec<usize> = (0..blocks.len()).map(|_| rng.random_range(0..=extra)).collect();
        cuts.sort_unstable();
        let mut episodes = Vec::new();
        let mut bouts = Vec::new();
        let mut t = 0usize;
        let mut prev_cut = 0;
        for (b, cut) in blocks.iter().zip(&cuts) {
            t += margin + (cut - prev_cut);
            prev_cut = *cut;
            let (start, dur) = ((t * 60) as f64, (len_of(b) * 60) as f64);
            match *b {
                Block::Episode(_) => {
                    let k = rng.random_range(spec.min_intensity..=spec.max_intensity);
                    episodes.push(EpisodeSpec::scaled(start, dur, k));
                }
                Block::Bout(_) => bouts.push(ActivityBout {
                    start_s: start,
                    duration_s: dur,
                    hr_delta: rng.random_range(8.0..25.0),
                    acc_var_multiplier: rng.random_range(2.0..6.0),
                }),
            }
            t += len_of(b);
        }
        let baseline = Baseline {
            heart_rate_bpm: rng.random_range(62.0..78.0),
            acc_noise_g: rng.random_range(0.015..0.03),
            eda_tonic_low: rng.random_range(0.8..1.5),
            eda_tonic_high: rng.random_range(3.0..4.0),
            ..Baseline::default()
        };
        plans.push(SessionSpec {
            participant_id: format!("P{:02}", i + 1),
            session_id: "S1".into(),
            start_time: 1_600_000_000.0 + 86_400.0 * i as f64,
            duration_s: (minutes * 60) as f64,
            fully_labeled: labeled,
            episodes,
            bouts,
            baseline,
        });
    }
    Ok(plans)
}

/// Generate every planned session, in parallel, from per-session seeds.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SynthSession>, SynthError> {
    let plans = plan_cohort(spec)?;
    plans
        .par_iter()
        .enumerate()
        .map(|(i, p)| generate_session(seed::derive(seed::derive_named(spec.seed, "session"), i as u64), p))
        .collect()
}

/// Minutes of (normal, agitation, unlabeled) time implied by the label files.
pub fn realized_minutes(sessions: &[SynthSession]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for s in sessions {
        let total = s.spec.duration_s / 60.0;
        if s.labels.fully_labeled {
            let aa = s.labels.agitation_seconds() / 60.0;
            out[0] += total - aa;
            out[1] += aa;
        } else {
            out[2] += total;
        }
    }
    out
}

/// Archive directory and label file names for a session under `dir`.
pub fn session_paths(dir: &Path, participant: &str, session: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let stem = format!("{participant}_{session}");
    (dir.join(&stem), dir.join(format!("{stem}.labels.csv")))
}

/// Write archives, label files and `ground_truth.json` (every episode,
/// including those hidden in unlabeled sessions).
pub fn write_cohort(sessions: &[SynthSession], dir: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    sessions.par_iter().try_for_each(|s| -> Result<(), SynthError> {
        let (archive, labels) = session_paths(dir, &s.spec.participant_id, &s.spec.session_id);
        ingest::write_e4_archive(&s.recording, &archive)?;
        ingest::write_labels(&s.labels, &labels)?;
        Ok(())
    })?;
    let truth: Vec<&SessionSpec> = sessions.iter().map(|s| &s.spec).collect();
    fs::write(dir.join("ground_truth.json"), serde_json::to_string_pretty(&truth).expect("serializable"))?;
    Ok(())
}

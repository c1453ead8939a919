//! End-to-end runner: cohort -> features -> VAE -> 12 experiments.
//!
//! All randomness flows from one master seed; component seeds are derived
//! by name, so the per-stage commands of the CLI reproduce the same runs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ClassifierKind, Hyperparams};
use crate::eval::{self, EvalReport, ExperimentOutput, ExperimentSpec, Mode, Representation, SplitSpec};
use crate::features::{self, FeatureCatalog, FeatureMatrix, LabelCounts, WindowSpec};
use crate::ingest::{self, LabelSet, SessionRecording};
use crate::preprocess;
use crate::seed;
use crate::selftrain::SelfTrainConfig;
use crate::synth::{self, CohortSpec};
use crate::vae::{self, TrainHistory, VaeConfig, VaeModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failure: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 1 config, 2 data (including unreadable or unwritable paths),
    /// 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io(_) => 2,
            PipelineError::Training(_) => 3,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn train_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Training(e.to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    /// Generate the cohort in memory instead of reading `data_dir`.
    pub synth: bool,
    pub data_dir: Option<PathBuf>,
    pub cohort: CohortSpec,
}

/// Every section mirrors a module config. Seeds inside sections are
/// ignored: [`PipelineConfig::resolve`] derives them from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: InputConfig,
    pub window: WindowSpec,
    pub vae: VaeConfig,
    pub classifier: Hyperparams,
    pub self_train: SelfTrainConfig,
    pub split: SplitSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            input: InputConfig::default(),
            window: WindowSpec::default(),
            vae: VaeConfig::default(),
            classifier: Hyperparams::default(),
            self_train: SelfTrainConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fill in derived seeds and check every section.
    pub fn resolve(&self) -> Result<Self, PipelineError> {
        let mut c = self.clone();
        c.vae.seed = seed::derive_named(self.seed, "vae");
        c.split.seed = seed::derive_named(self.seed, "split");
        c.self_train.seed = classifier_seed(self.seed);
        c.input.cohort.seed = seed::derive_named(self.seed, "synth");
        let cfg = |e: String| PipelineError::Config(e);
        c.window.validate().map_err(|e| cfg(e.to_string()))?;
        c.vae.validate().map_err(|e| cfg(e.to_string()))?;
        c.classifier.validate().map_err(|e| cfg(e.to_string()))?;
        c.self_train.validate().map_err(|e| cfg(e.to_string()))?;
        c.split.validate().map_err(|e| cfg(e.to_string()))?;
        if c.input.synth {
            c.input.cohort.validate().map_err(|e| cfg(e.to_string()))?;
        } else if c.input.data_dir.is_none() {
            return Err(cfg("either input.synth or input.data_dir must be set".into()));
        }
        Ok(c)
    }

    pub fn experiment_spec(&self, classifier: ClassifierKind, mode: Mode, representation: Representation) -> ExperimentSpec {
        ExperimentSpec {
            classifier,
            mode,
            representation,
            seed: classifier_seed(self.seed),
            hyperparams: self.classifier.clone(),
            self_train: self.self_train.clone(),
            split: self.split.clone(),
        }
    }
}

/// Seed shared by every classifier fit under a master seed.
pub fn classifier_seed(master: u64) -> u64 {
    seed::derive_named(master, "classifier")
}

/// Archives `<dir>/<P>_<S>/` paired with `<dir>/<P>_<S>.labels.csv`, sorted.
pub fn discover_sessions(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::Data(format!("input directory {} does not exist", dir.display())));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(data_err)? {
        let path = entry.map_err(data_err)?.path();
        if !path.is_dir() {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let labels = dir.join(format!("{name}.labels.csv"));
        if !labels.is_file() {
            return Err(PipelineError::Data(format!("archive {name} has no label file {}", labels.display())));
        }
        out.push((path, labels));
    }
    out.sort();
    if out.is_empty() {
        return Err(PipelineError::Data(format!("no session archives under {}", dir.display())));
    }
    Ok(out)
}

/// Labeled 198-column matrix of one session.
pub fn session_features(
    rec: &SessionRecording,
    labels: &LabelSet,
    window: &WindowSpec,
    catalog: &FeatureCatalog,
) -> Result<FeatureMatrix, PipelineError> {
    let report = ingest::validate_session(rec, labels);
    if !report.misalignments.is_empty() {
        log::warn!(
            "{}/{}: {} label spans extend past the recording",
            rec.participant_id,
            rec.session_id,
            report.misalignments.len()
        );
    }
    let aligned = preprocess::align_session(rec).map_err(|e| data_err(format!("{}/{}: {e}", rec.participant_id, rec.session_id)))?;
    let m = features::extract_features(&aligned, window, catalog).map_err(data_err)?;
    features::label_windows(&m, labels, window).map_err(data_err)
}

/// Feature matrix of the whole cohort, before column filtering.
pub fn cohort_features(cfg: &PipelineConfig) -> Result<FeatureMatrix, PipelineError> {
    let catalog = FeatureCatalog::default();
    let parts: Vec<FeatureMatrix> = if cfg.input.synth {
        let plans = synth::plan_cohort(&cfg.input.cohort).map_err(|e| PipelineError::Config(e.to_string()))?;
        let session_seed = seed::derive_named(cfg.input.cohort.seed, "session");
        plans
            .par_iter()
            .enumerate()
            .map(|(i, plan)| {
                let s = synth::generate_session(seed::derive(session_seed, i as u64), plan).map_err(data_err)?;
                session_features(&s.recording, &s.labels, &cfg.window, &catalog)
            })
            .collect::<Result<_, _>>()?
    } else {
        let dir = cfg.input.data_dir.as_ref().expect("resolved config has an input");
        discover_sessions(dir)?
            .par_iter()
            .map(|(archive, labels)| {
                let rec = ingest::parse_e4_archive(archive).map_err(data_err)?;
                let labels = ingest::parse_labels(labels).map_err(data_err)?;
                session_features(&rec, &labels, &cfg.window, &catalog)
            })
            .collect::<Result<_, _>>()?
    };
    FeatureMatrix::concat(&parts).map_err(data_err)
}

/// Raw features after dropping non-finite columns.
/// Drop gap windows (every value NaN), then every column that still holds a
/// non-finite value. Without the first step one mostly-gap window would
/// invalidate all columns.
pub fn filter_features(m: &FeatureMatrix) -> Result<FeatureMatrix, PipelineError> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|&i| !m.values.row(i).iter().all(|v| v.is_nan())).collect();
    let dropped = m.nrows() - keep.len();
    let m = if dropped > 0 {
        log::info!("dropped {dropped} gap windows");
        std::borrow::Cow::Owned(m.select_rows(&keep))
    } else {
        std::borrow::Cow::Borrowed(m)
    };
    let f = features::drop_invalid_columns(&m).map_err(data_err)?;
    if !f.removed_columns.is_empty() {
        log::info!("dropped {} non-finite columns", f.removed_columns.len());
    }
    Ok(f)
}

pub fn train_vae(raw: &FeatureMatrix, cfg: &VaeConfig) -> Result<(VaeModel, TrainHistory, FeatureMatrix), PipelineError> {
    let (model, history) = vae::train(raw, cfg).map_err(train_err)?;
    let z = vae::transform(raw, &model).map_err(train_err)?;
    Ok((model, history, z))
}

pub const CONFIGURATIONS: [(Representation, Mode); 4] = [
    (Representation::Raw, Mode::Supervised),
    (Representation::Vae, Mode::Supervised),
    (Representation::Raw, Mode::Selftrain),
    (Representation::Vae, Mode::Selftrain),
];

pub fn experiment_name(representation: Representation, mode: Mode, kind: ClassifierKind) -> String {
    format!("{}_{}_{}", representation.as_str(), mode.as_str(), kind.short_name())
}

/// Everything a pipeline run produces, before it is written.
pub struct PipelineRun {
    pub config: PipelineConfig,
    pub features_prefilter: usize,
    pub raw: FeatureMatrix,
    pub vae_model: VaeModel,
    pub vae_history: TrainHistory,
    /// Wall-clock seconds spent training the VAE (not part of the summary).
    pub vae_seconds: f64,
    pub encoded: FeatureMatrix,
    pub experiments: Vec<(String, ExperimentOutput)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub classifier: ClassifierKind,
    pub mode: Mode,
    pub representation: Representation,
    pub n_features: usize,
    pub balanced_accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub agitation_f1: f64,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub final_normal: usize,
    pub final_agitation: usize,
    pub self_train_iterations: Option<usize>,
}

/// Machine-readable result. Wall-clock times are left out so that equal
/// configurations give byte-identical summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub n_rows: usize,
    pub label_counts: LabelCounts,
    pub columns_before_filter: usize,
    pub columns_after_filter: usize,
    pub removed_columns: Vec<String>,
    pub vae_first_epoch_loss: f64,
    pub vae_final_epoch_loss: f64,
    pub vae_final_val_loss: f64,
    pub experiments: Vec<ExperimentSummary>,
}

impl PipelineRun {
    pub fn report(&self, name: &str) -> Option<&EvalReport> {
        self.experiments.iter().find(|(n, _)| n == name).map(|(_, o)| &o.report)
    }

    pub fn summary(&self) -> Summary {
        let first = self.vae_history.epochs.first();
        let last = self.vae_history.epochs.last();
        Summary {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            n_rows: self.raw.nrows(),
            label_counts: self.raw.label_counts(),
            columns_before_filter: self.features_prefilter,
            columns_after_filter: self.raw.ncols(),
            removed_columns: self.raw.removed_columns.clone(),
            vae_first_epoch_loss: first.map_or(f64::NAN, |e| e.train_vae),
            vae_final_epoch_loss: last.map_or(f64::NAN, |e| e.train_vae),
            vae_final_val_loss: last.map_or(f64::NAN, |e| e.val_vae),
            experiments: self
                .experiments
                .iter()
                .map(|(name, o)| {
                    let r = &o.report;
                    ExperimentSummary {
                        name: name.clone(),
                        classifier: r.classifier,
                        mode: r.mode,
                        representation: r.representation,
                        n_features: r.n_features,
                        balanced_accuracy: r.balanced_accuracy,
                        weighted_precision: r.scores.weighted_precision,
                        weighted_recall: r.scores.weighted_recall,
                        weighted_f1: r.scores.weighted_f1,
                        agitation_f1: r.scores.f1[1],
                        auc_roc: r.auc_roc,
                        auc_pr: r.auc_pr,
                        final_normal: r.labels.final_normal,
                        final_agitation: r.labels.final_agitation,
                        self_train_iterations: r.self_train_iterations,
                    }
                })
                .collect(),
        }
    }

    /// The four configuration tables, in the order of [`CONFIGURATIONS`].
    pub fn tables(&self) -> Vec<(String, String)> {
        CONFIGURATIONS
            .iter()
            .map(|&(rep, mode)| {
                let reports: Vec<&EvalReport> = ClassifierKind::ALL
                    .iter()
                    .filter_map(|&k| self.report(&experiment_name(rep, mode, k)))
                    .collect();
                let file = format!("table_{}_{}.md", rep.as_str(), mode.as_str());
                (file, eval::markdown_table(eval::configuration_title(rep, mode), &reports))
            })
            .collect()
    }

    /// Write every artifact under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let fail = |p: &Path, e: &dyn std::fmt::Display| PipelineError::Data(format!("{}: {e}", p.display()));
        fs::create_dir_all(dir)?;
        let raw_path = dir.join("features_raw.csv");
        self.raw.write_csv(&raw_path).map_err(|e| fail(&raw_path, &e))?;
        let z_path = dir.join("features_vae.csv");
        self.encoded.write_csv(&z_path).map_err(|e| fail(&z_path, &e))?;
        let vae_dir = dir.join("vae");
        fs::create_dir_all(&vae_dir)?;
        self.vae_model.save(&vae_dir.join("model.json")).map_err(|e| fail(&vae_dir, &e))?;
        self.vae_history.write_csv(&vae_dir.join("history.csv")).map_err(|e| fail(&vae_dir, &e))?;
        for (name, out) in &self.experiments {
            write_experiment(&dir.join("experiments").join(name), out)?;
        }
        let mut all = String::new();
        for (file, table) in self.tables() {
            fs::write(dir.join(&file), &table)?;
            all.push_str(&table);
            all.push('\n');
        }
        fs::write(dir.join("tables.md"), all)?;
        let summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        fs::write(dir.join("summary.json"), summary + "\n")?;
        Ok(())
    }
}

/// `report.json`, ROC/PR curves and, when self-trained, `selftrain.csv`.
pub fn write_experiment(dir: &Path, out: &ExperimentOutput) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(&out.report).expect("report serializes");
    fs::write(dir.join("report.json"), report + "\n")?;
    fs::write(dir.join("roc.csv"), eval::curve_csv(&out.report.roc_points))?;
    fs::write(dir.join("pr.csv"), eval::curve_csv(&out.report.pr_points))?;
    if let Some(st) = &out.self_train {
        st.write_csv(&dir.join("selftrain.csv")).map_err(|e| PipelineError::Data(e.to_string()))?;
    }
    Ok(())
}

/// Compute every artifact in memory. Nothing is written.
pub fn execute(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let cfg = config.resolve()?;
    let t = std::time::Instant::now();
    let all = cohort_features(&cfg)?;
    log::info!("features: {} rows x {} columns in {:.1} s", all.nrows(), all.ncols(), t.elapsed().as_secs_f64());
    let raw = filter_features(&all)?;
    let t = std::time::Instant::now();
    let (vae_model, vae_history, encoded) = train_vae(&raw, &cfg.vae)?;
    let vae_seconds = t.elapsed().as_secs_f64();
    log::info!("vae: {} epochs in {vae_seconds:.1} s", vae_history.epochs.len());
    let mut experiments = Vec::new();
    for (rep, mode) in CONFIGURATIONS {
        let m = match rep {
            Representation::Raw => &raw,
            Representation::Vae => &encoded,
        };
        for kind in ClassifierKind::ALL {
            let name = experiment_name(rep, mode, kind);
            let out = eval::run_experiment(m, &cfg.experiment_spec(kind, mode, rep)).map_err(train_err)?;
            log::info!(
                "{name}: balanced accuracy {:.4} in {:.1} s",
                out.report.balanced_accuracy,
                out.report.processing_time_seconds
            );
            experiments.push((name, out));
        }
    }
    Ok(PipelineRun {
        config: cfg,
        features_prefilter: all.ncols(),
        raw,
        vae_model,
        vae_history,
        vae_seconds,
        encoded,
        experiments,
    })
}

/// Run and write to `config.out_dir`. Outputs appear only after every
/// stage has succeeded.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    let run = execute(config)?;
    run.write(&run.config.out_dir)?;
    Ok(run)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agitation::ensemble::{ClassifierKind, Model};
use agitation::eval::{self, Mode, Representation};
use agitation::features::FeatureMatrix;
use agitation::ingest;
use agitation::pipeline::{self, PipelineConfig, PipelineError};
use agitation::selftrain::{self, SelfTrainConfig};
use agitation::synth;
use agitation::vae::{self, VaeModel};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agitation", version, about = "Agitation detection from wristband recordings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for single-artifact commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Rf,
    Et,
    Boosted,
}

impl From<ClassifierArg> for ClassifierKind {
    fn from(c: ClassifierArg) -> Self {
        match c {
            ClassifierArg::Rf => ClassifierKind::RandomForest,
            ClassifierArg::Et => ClassifierKind::ExtraTrees,
            ClassifierArg::Boosted => ClassifierKind::Boosted,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RepresentationArg {
    Raw,
    Vae,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Supervised,
    Selftrain,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort as archives and label files.
    Synth {
        /// Fraction of the reference cohort's minutes (default 0.1).
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Parse and validate every session under a directory.
    Ingest {
        /// Directory of archives and label files
        #[arg(long)]
        input: PathBuf,
    },
    /// Extract the labeled feature matrix from a directory of sessions.
    Extract {
        /// Directory of archives and label files
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the VAE on a feature matrix.
    TrainVae {
        /// Feature matrix CSV
        #[arg(long)]
        features: PathBuf,
    },
    /// Replace feature rows by their latent means.
    Encode {
        /// Feature matrix CSV
        #[arg(long)]
        features: PathBuf,
        /// VAE model file
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit a classifier on every labeled row.
    Fit {
        /// Feature matrix CSV
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "boosted")]
        classifier: ClassifierArg,
    },
    /// Self-train a classifier using every unlabeled row.
    SelfTrain {
        /// Feature matrix CSV
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "boosted")]
        classifier: ClassifierArg,
    },
    /// Split, train and score one experiment.
    Evaluate {
        /// Feature matrix CSV
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "boosted")]
        classifier: ClassifierArg,
        #[arg(long, value_enum, default_value = "supervised")]
        mode: ModeArg,
        /// Tag recorded in the report; the matrix decides the content.
        #[arg(long, value_enum, default_value = "raw")]
        representation: RepresentationArg,
    },
    /// Run all 12 experiments end to end.
    Pipeline {
        /// Generate the synthetic cohort in memory.
        #[arg(long)]
        synth: bool,
        /// Directory of archives and label files.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn data<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn training<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Training(e.to_string())
}

fn read_features(path: &Path) -> Result<FeatureMatrix, PipelineError> {
    FeatureMatrix::read_csv(path).map_err(data)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable") + "\n")?;
    Ok(())
}

/// Resolve with a placeholder input for commands that take explicit files.
fn resolved(mut cfg: PipelineConfig) -> Result<PipelineConfig, PipelineError> {
    if !cfg.input.synth && cfg.input.data_dir.is_none() {
        cfg.input.data_dir = Some(PathBuf::from("."));
    }
    cfg.resolve()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let base = config(&cli.common)?;
    let out = base.out_dir.clone();
    match cli.command {
        Command::Synth { scale } => {
            let mut cfg = base;
            cfg.input.synth = true;
            if let Some(s) = scale {
                let seed = cfg.input.cohort.seed;
                cfg.input.cohort = synth::CohortSpec::at_scale(s, seed);
            }
            let cfg = cfg.resolve()?;
            let sessions = synth::generate_cohort(&cfg.input.cohort).map_err(|e| PipelineError::Config(e.to_string()))?;
            synth::write_cohort(&sessions, &out).map_err(data)?;
            let m = synth::realized_minutes(&sessions);
            println!("wrote {} sessions to {} (normal {:.0} min, agitation {:.0} min, unlabeled {:.0} min)", sessions.len(), out.display(), m[0], m[1], m[2]);
        }
        Command::Ingest { input } => {
            let mut reports = Vec::new();
            for (archive, labels) in pipeline::discover_sessions(&input)? {
                let rec = ingest::parse_e4_archive(&archive).map_err(data)?;
                let labels = ingest::parse_labels(&labels).map_err(data)?;
                let r = ingest::validate_session(&rec, &labels);
                println!(
                    "{}/{}: {:.1} usable minutes, {} coverage gaps, {} misaligned spans",
                    r.participant_id,
                    r.session_id,
                    r.usable_minutes,
                    r.coverage_gaps.len(),
                    r.misalignments.len()
                );
                reports.push(r);
            }
            fs::create_dir_all(&out)?;
            write_json(&out.join("validation.json"), &reports)?;
        }
        Command::Extract { input } => {
            let mut cfg = base;
            cfg.input.data_dir = Some(input);
            let cfg = cfg.resolve()?;
            let all = pipeline::cohort_features(&cfg)?;
            let raw = pipeline::filter_features(&all)?;
            fs::create_dir_all(&out)?;
            all.write_csv(&out.join("features_all.csv")).map_err(data)?;
            raw.write_csv(&out.join("features_raw.csv")).map_err(data)?;
            let c = raw.label_counts();
            println!(
                "{} windows ({} normal, {} agitation, {} unlabeled); {} of {} columns kept",
                raw.nrows(),
                c.normal,
                c.agitation,
                c.unlabeled,
                raw.ncols(),
                all.ncols()
            );
        }
        Command::TrainVae { features } => {
            let cfg = resolved(base)?;
            let m = read_features(&features)?;
            let (model, history) = vae::train(&m, &cfg.vae).map_err(training)?;
            fs::create_dir_all(&out)?;
            model.save(&out.join("model.json")).map_err(data)?;
            history.write_csv(&out.join("history.csv")).map_err(data)?;
            if let (Some(f), Some(l)) = (history.epochs.first(), history.epochs.last()) {
                println!("vae loss {:.4} -> {:.4} over {} epochs", f.train_vae, l.train_vae, history.epochs.len());
            }
        }
        Command::Encode { features, model } => {
            let m = read_features(&features)?;
            let model = VaeModel::load(&model).map_err(data)?;
            let z = vae::transform(&m, &model).map_err(data)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            z.write_csv(&out).map_err(data)?;
        }
        Command::Fit { features, classifier } => {
            let cfg = resolved(base)?;
            let m = read_features(&features)?;
            let (x, y) = m.labeled_xy();
            let model = Model::fit(classifier.into(), x.view(), &y, &cfg.classifier, pipeline::classifier_seed(cfg.seed))
                .map_err(training)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            model.save(&out).map_err(data)?;
        }
        Command::SelfTrain { features, classifier } => {
            let cfg = resolved(base)?;
            let m = read_features(&features)?;
            let st = SelfTrainConfig { base: classifier.into(), ..cfg.self_train.clone() };
            let (model, augmented, report) = selftrain::self_train(&m, &st, &cfg.classifier).map_err(training)?;
            fs::create_dir_all(&out)?;
            model.save(&out.join("model.json")).map_err(data)?;
            augmented.write_csv(&out.join("features_augmented.csv")).map_err(data)?;
            report.write_csv(&out.join("selftrain.csv")).map_err(data)?;
            println!(
                "{} after {} iterations: {} normal, {} agitation, {} unlabeled",
                report.termination.as_str(),
                report.iterations.len(),
                report.final_normal,
                report.final_agitation,
                report.final_unlabeled
            );
        }
        Command::Evaluate { features, classifier, mode, representation } => {
            let cfg = resolved(base)?;
            let m = read_features(&features)?;
            let mode = match mode {
                ModeArg::Supervised => Mode::Supervised,
                ModeArg::Selftrain => Mode::Selftrain,
            };
            let rep = match representation {
                RepresentationArg::Raw => Representation::Raw,
                RepresentationArg::Vae => Representation::Vae,
            };
            let spec = cfg.experiment_spec(classifier.into(), mode, rep);
            let result = eval::run_experiment(&m, &spec).map_err(training)?;
            pipeline::write_experiment(&out, &result)?;
            println!("balanced accuracy {:.4}", result.report.balanced_accuracy);
        }
        Command::Pipeline { synth, input } => {
            let mut cfg = base;
            if synth {
                cfg.input.synth = true;
            }
            if let Some(dir) = input {
                cfg.input.data_dir = Some(dir);
            }
            let run = pipeline::run_pipeline(&cfg)?;
            for (_, table) in run.tables() {
                println!("{table}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::{
    balanced_accuracy, group_split, pr_curve, prf_scores, roc_auc, stratified_split, ConfusionMatrix, CurvePoint,
    EvalError, PrfScores, SplitSpec,
};
use crate::ensemble::{ClassifierKind, Hyperparams, Model};
use crate::features::FeatureMatrix;
use crate::selftrain::{self_train, SelfTrainConfig, SelfTrainReport, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    #[serde(alias = "self_train")]
    Selftrain,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::Selftrain => "selftrain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Raw,
    Vae,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::Vae => "vae",
        }
    }
}

/// Table title for one (representation, mode) configuration.
pub fn configuration_title(representation: Representation, mode: Mode) -> &'static str {
    match (representation, mode) {
        (Representation::Raw, Mode::Supervised) => "Fully supervised baseline on raw features",
        (Representation::Vae, Mode::Supervised) => "Fully supervised with VAE features",
        (Representation::Raw, Mode::Selftrain) => "Self-training on raw features",
        (Representation::Vae, Mode::Selftrain) => "Self-training with VAE features",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub classifier: ClassifierKind,
    pub mode: Mode,
    /// Tag only: the matrix passed in already holds this representation.
    pub representation: Representation,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// `base` and `seed` are taken from this spec.
    pub self_train: SelfTrainConfig,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub train_normal: usize,
    pub train_agitation: usize,
    pub test_normal: usize,
    pub test_agitation: usize,
    pub unlabeled_pool: usize,
    /// Labeled training rows after self-training (equal to the train counts
    /// in supervised mode).
    pub final_normal: usize,
    pub final_agitation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: ClassifierKind,
    pub mode: Mode,
    pub representation: Representation,
    pub n_features: usize,
    pub balanced_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub scores: PrfScores,
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub processing_time_seconds: f64,
    pub labels: LabelSummary,
    pub self_train_iterations: Option<usize>,
    pub termination: Option<Termination>,
    pub hyperparams: Hyperparams,
    #[serde(skip)]
    pub roc_points: Vec<CurvePoint>,
    #[serde(skip)]
    pub pr_points: Vec<CurvePoint>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub model: Model,
    pub self_train: Option<SelfTrainReport>,
    /// Matrix row indices of the labeled training and test rows.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Unlabeled rows offered to self-training (empty when supervised).
    pub pool_rows: Vec<usize>,
}

/// Split the labeled rows, train, and score the untouched test rows.
///
/// Unlabeled rows never enter the test set; in self-training mode they form
/// the pseudo-labeling pool alongside the labeled training rows. The clock
/// covers fitting and test-set prediction only.
pub fn run_experiment(m: &FeatureMatrix, spec: &ExperimentSpec) -> Result<ExperimentOutput, EvalError> {
    let labeled: Vec<usize> = (0..m.nrows()).filter(|&i| m.row_labels[i].class().is_some()).collect();
    let y_labeled: Vec<u8> = labeled.iter().map(|&i| m.row_labels[i].class().unwrap()).collect();
    let (tr, te) = if spec.split.subject_level {
        let groups: Vec<String> = labeled.iter().map(|&i| m.row_meta[i].participant_id.clone()).collect();
        group_split(&groups, &spec.split)?
    } else {
        stratified_split(&y_labeled, &spec.split)?
    };
    let train_rows: Vec<usize> = tr.iter().map(|&k| labeled[k]).collect();
    let test_rows: Vec<usize> = te.iter().map(|&k| labeled[k]).collect();
    let pool_rows: Vec<usize> = match spec.mode {
        Mode::Supervised => Vec::new(),
        Mode::Selftrain => (0..m.nrows()).filter(|&i| m.row_labels[i].class().is_none()).collect(),
    };
    let y_test: Vec<u8> = te.iter().map(|&k| y_labeled[k]).collect();
    let count = |rows: &[usize], c: u8| rows.iter().filter(|&&i| m.row_labels[i].class() == Some(c)).count();
    let mut labels = LabelSummary {
        train_normal: count(&train_rows, 0),
        train_agitation: count(&train_rows, 1),
        test_normal: count(&test_rows, 0),
        test_agitation: count(&test_rows, 1),
        unlabeled_pool: pool_rows.len(),
        ..Default::default()
    };

    let x_test = m.values.select(Axis(0), &test_rows);
    let start = Instant::now();
    let (model, st_report) = match spec.mode {
        Mode::Supervised => {
            let x = m.values.select(Axis(0), &train_rows);
            let y: Vec<u8> = train_rows.iter().map(|&i| m.row_labels[i].class().unwrap()).collect();
            (Model::fit(spec.classifier, x.view(), &y, &spec.hyperparams, spec.seed)?, None)
        }
        Mode::Selftrain => {
            let mut rows: Vec<usize> = train_rows.iter().chain(&pool_rows).copied().collect();
            rows.sort_unstable();
            let sub = m.select_rows(&rows);
            let cfg = SelfTrainConfig { base: spec.classifier, seed: spec.seed, ..spec.self_train.clone() };
            let (model, _, report) = self_train(&sub, &cfg, &spec.hyperparams)?;
            (model, Some(report))
        }
    };
    let proba = model.predict_proba(x_test.view())?;
    let processing_time_seconds = start.elapsed().as_secs_f64();

    let scores: Vec<f64> = proba.column(1).to_vec();
    let predicted: Vec<u8> = scores.iter().map(|&p| u8::from(p > 0.5)).collect();
    let confusion = ConfusionMatrix::from_predictions(&y_test, &predicted)?;
    let (auc_roc, roc_points) = roc_auc(&scores, &y_test)?;
    let (auc_pr, pr_points) = pr_curve(&scores, &y_test)?;
    match &st_report {
        Some(r) => {
            labels.final_normal = labels.train_normal + r.assignments.iter().filter(|a| a.class == 0).count();
            labels.final_agitation = labels.train_agitation + r.assignments.iter().filter(|a| a.class == 1).count();
        }
        None => {
            labels.final_normal = labels.train_normal;
            labels.final_agitation = labels.train_agitation;
        }
    }
    let report = EvalReport {
        classifier: spec.classifier,
        mode: spec.mode,
        representation: spec.representation,
        n_features: m.ncols(),
        balanced_accuracy: balanced_accuracy(&confusion)?,
        confusion,
        scores: prf_scores(&confusion),
        auc_roc,
        auc_pr,
        processing_time_seconds,
        labels,
        self_train_iterations: st_report.as_ref().map(|r| r.iterations.len()),
        termination: st_report.as_ref().map(|r| r.termination),
        hyperparams: spec.hyperparams.clone(),
        roc_points,
        pr_points,
    };
    Ok(ExperimentOutput { report, model, self_train: st_report, train_rows, test_rows, pool_rows })
}

/// One configuration's table: metrics as rows, classifiers as columns.
pub fn markdown_table(title: &str, reports: &[&EvalReport]) -> String {
    let mut s = format!("## {title}\n\n| Metric |");
    for r in reports {
        let _ = write!(s, " {} |", r.classifier.display_name());
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(reports.len()));
    s.push('\n');
    let pct = |v: f64| format!("{:.2}%", 100.0 * v);
    let rows: [(&str, Box<dyn Fn(&EvalReport) -> String>); 9] = [
        ("Balanced accuracy", Box::new(move |r| pct(r.balanced_accuracy))),
        ("Precision (weighted)", Box::new(move |r| pct(r.scores.weighted_precision))),
        ("Recall (weighted)", Box::new(move |r| pct(r.scores.weighted_recall))),
        ("F1 (weighted)", Box::new(move |r| pct(r.scores.weighted_f1))),
        ("Agitation F1", Box::new(move |r| pct(r.scores.f1[1]))),
        ("AUC ROC", Box::new(|r| format!("{:.4}", r.auc_roc))),
        ("AUC PR", Box::new(|r| format!("{:.4}", r.auc_pr))),
        ("Processing time (s)", Box::new(|r| format!("{:.2}", r.processing_time_seconds))),
        ("Training labels Normal/AA", Box::new(|r| format!("{}/{}", r.labels.final_normal, r.labels.final_agitation))),
    ];
    for (name, f) in &rows {
        let _ = write!(s, "| {name} |");
        for r in reports {
            let _ = write!(s, " {} |", f(r));
        }
        s.push('\n');
    }
    s
}

//! Pseudo-labeling loop around a tree-ensemble base classifier.
//!
//! Each iteration refits from scratch on every labeled row (original plus
//! pseudo-labeled), scores the remaining unlabeled rows, and admits those
//! whose top class probability is strictly above the threshold. Admitted
//! labels are permanent.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{ClassifierKind, EnsembleError, Hyperparams, Model};
use crate::features::{FeatureMatrix, RowLabel};

#[derive(Debug, thiserror::Error)]
pub enum SelfTrainError {
    #[error("labeled rows must contain both classes (normal {normal}, agitation {agitation})")]
    MissingClass { normal: usize, agitation: usize },
    #[error("invalid self-training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub threshold: f64,
    pub max_iter: usize,
    pub base: ClassifierKind,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self { threshold: 0.7, max_iter: 100, base: ClassifierKind::Boosted, seed: 0 }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        if !(self.threshold > 0.5 && self.threshold < 1.0) {
            return Err(SelfTrainError::InvalidConfig(format!("threshold {} outside (0.5, 1)", self.threshold)));
        }
        if self.max_iter == 0 {
            return Err(SelfTrainError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Converged,
    MaxIter,
    NoUnlabeled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "CONVERGED",
            Self::MaxIter => "MAX_ITER",
            Self::NoUnlabeled => "NO_UNLABELED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub new_labels: usize,
    pub remaining_unlabeled: usize,
    pub pseudo_normal: usize,
    pub pseudo_agitation: usize,
}

/// One admitted row, with the probability that admitted it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub row: usize,
    pub iteration: usize,
    pub class: u8,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainReport {
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub initial_unlabeled: usize,
    pub final_normal: usize,
    pub final_agitation: usize,
    pub final_unlabeled: usize,
    pub assignments: Vec<PseudoLabel>,
}

impl SelfTrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,new_labels,remaining_unlabeled,pseudo_normal,pseudo_agitation\n");
        for r in &self.iterations {
            let _ = writeln!(s, "{},{},{},{},{}", r.iter, r.new_labels, r.remaining_unlabeled, r.pseudo_normal, r.pseudo_agitation);
        }
        let _ = writeln!(s, "# termination_reason={}", self.termination.as_str());
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SelfTrainError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn fit_on(m: &FeatureMatrix, labels: &[Option<u8>], cfg: &SelfTrainConfig, hp: &Hyperparams) -> Result<Model, SelfTrainError> {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    let x = m.values.select(ndarray::Axis(0), &idx);
    let y: Vec<u8> = idx.iter().map(|&i| labels[i].unwrap()).collect();
    Ok(Model::fit(cfg.base, x.view(), &y, hp, cfg.seed)?)
}

/// Returns the model fit on the final augmented set, the matrix with
/// pseudo-labels filled in, and the per-iteration report.
pub fn self_train(
    m: &FeatureMatrix,
    cfg: &SelfTrainConfig,
    hp: &Hyperparams,
) -> Result<(Model, FeatureMatrix, SelfTrainReport), SelfTrainError> {
    cfg.validate()?;
    let counts = m.label_counts();
    if counts.normal == 0 || counts.agitation == 0 {
        return Err(SelfTrainError::MissingClass { normal: counts.normal, agitation: counts.agitation });
    }
    let mut labels: Vec<Option<u8>> = m.row_labels.iter().map(|l| l.class()).collect();
    let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    let initial_unlabeled = pool.len();
    let mut iterations = Vec::new();
    let mut assignments = Vec::new();

    let mut model = fit_on(m, &labels, cfg, hp)?;
    let termination = loop {
        if pool.is_empty() {
            break Termination::NoUnlabeled;
        }
        if iterations.len() == cfg.max_iter {
            break Termination::MaxIter;
        }
        let iter = iterations.len() + 1;
        let x = m.values.select(ndarray::Axis(0), &pool);
        let proba = model.predict_proba(x.view())?;
        let mut kept = Vec::with_capacity(pool.len());
        let mut record = IterationRecord { iter, new_labels: 0, remaining_unlabeled: 0, pseudo_normal: 0, pseudo_agitation: 0 };
        for (k, &row) in pool.iter().enumerate() {
            let (p0, p1) = (proba[[k, 0]], proba[[k, 1]]);
            let (class, p) = if p1 > p0 { (1u8, p1) } else { (0u8, p0) };
            if p > cfg.threshold {
                labels[row] = Some(class);
                assignments.push(PseudoLabel { row, iteration: iter, class, probability: p });
                record.new_labels += 1;
                if class == 1 {
                    record.pseudo_agitation += 1;
                } else {
                    record.pseudo_normal += 1;
                }
            } else {
                kept.push(row);
            }
        }
        pool = kept;
        record.remaining_unlabeled = pool.len();
        iterations.push(record);
        log::debug!("self-train iter {iter}: +{} ({} left)", record.new_labels, pool.len());
        if record.new_labels == 0 {
            break Termination::Converged;
        }
        model = fit_on(m, &labels, cfg, hp)?;
    };

    let mut out = m.clone();
    out.row_labels = labels
        .iter()
        .map(|l| l.map_or(RowLabel::Unlabeled, RowLabel::from_class))
        .collect();
    let final_counts = out.label_counts();
    let report = SelfTrainReport {
        iterations,
        termination,
        initial_unlabeled,
        final_normal: final_counts.normal,
        final_agitation: final_counts.agitation,
        final_unlabeled: final_counts.unlabeled,
        assignments,
    };
    Ok((model, out, report))
}

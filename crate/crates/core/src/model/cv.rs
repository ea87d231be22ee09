use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    auc_rank, balanced_weights, bootstrap_ci, fit, pr_curve, roc_curve, BootstrapCi, Confusion, LogRegModel,
    Metrics, PrPoint, Preprocessor, RocPoint, DECISION_THRESHOLD,
};
use crate::descriptors::{ClassLabel, FeatureName, PmdTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Regional and asymmetry features.
    All,
    Regional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lambda: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub features: FeatureSet,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { lambda: 1.0, n_bootstrap: 5000, seed: 0, features: FeatureSet::All }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if self.n_bootstrap == 0 {
            return Err(Error::invalid("n_bootstrap must be at least 1"));
        }
        Ok(())
    }
}

/// Columns used by the classifier under `set`.
pub fn select_features(table: &PmdTable, set: FeatureSet) -> PmdTable {
    match set {
        FeatureSet::All => table.clone(),
        FeatureSet::Regional => {
            table.select_columns(|c| FeatureName::parse(c).is_some_and(|f| !f.is_asymmetry()))
        }
    }
}

pub fn positive_labels(table: &PmdTable) -> Vec<bool> {
    table.labels.iter().map(|l| l.is_positive()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub preprocessor: Preprocessor,
    pub model: LogRegModel,
}

/// Fit preprocessing and model on every row except `held_out`, with class
/// weights from the training rows.
pub fn fit_fold(table: &PmdTable, held_out: Option<usize>, lambda: f64) -> Result<FoldFit> {
    let train: Vec<usize> = (0..table.n_subjects()).filter(|&i| Some(i) != held_out).collect();
    let rows: Vec<&Vec<Option<f64>>> = train.iter().map(|&i| &table.rows[i]).collect();
    let y: Vec<bool> = train.iter().map(|&i| table.labels[i].is_positive()).collect();
    let preprocessor = Preprocessor::fit(&rows)?;
    let z = preprocessor.transform(&rows);
    let cw = balanced_weights(&y)?;
    let model = fit(&z, &y, lambda, cw)?;
    Ok(FoldFit { preprocessor, model })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: String,
    pub label: ClassLabel,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub n_subjects: usize,
    pub n_features: usize,
    pub lambda: f64,
    pub predictions: Vec<Prediction>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub ci: BootstrapCi,
    /// Folds whose solver stopped at the iteration cap.
    pub nonconverged_folds: Vec<String>,
}

impl CvReport {
    pub fn probabilities(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.probability).collect()
    }
}

pub fn loo_cv(table: &PmdTable, cfg: &ModelConfig) -> Result<CvReport> {
    cfg.validate()?;
    let (pos, neg) = table.class_counts();
    if pos < 2 || neg < 2 {
        return Err(Error::Cohort(format!(
            "leave-one-out needs at least two subjects per class (stroke {pos}, seizure {neg})"
        )));
    }
    let n = table.n_subjects();
    let folds: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, bool)> {
            let f = fit_fold(table, Some(i), cfg.lambda)?;
            let z = f.preprocessor.transform_row(&table.rows[i]);
            Ok((f.model.predict_proba(&z), f.model.converged))
        })
        .collect::<Result<_>>()?;

    let probs: Vec<f64> = folds.iter().map(|f| f.0).collect();
    let labels = positive_labels(table);
    let nonconverged_folds: Vec<String> =
        folds.iter().enumerate().filter(|(_, f)| !f.1).map(|(i, _)| table.subjects[i].clone()).collect();
    for s in &nonconverged_folds {
        log::warn!("fold holding out {s} stopped at the iteration cap");
    }
    let roc = roc_curve(&probs, &labels)?;
    let metrics = Metrics::compute(&probs, &labels)?;
    debug_assert_eq!(metrics.auc, auc_rank(&probs, &labels)?);
    Ok(CvReport {
        n_subjects: n,
        n_features: table.n_features(),
        lambda: cfg.lambda,
        predictions: (0..n)
            .map(|i| Prediction {
                subject: table.subjects[i].clone(),
                label: table.labels[i],
                probability: probs[i],
            })
            .collect(),
        roc,
        pr: pr_curve(&probs, &labels)?,
        threshold: DECISION_THRESHOLD,
        confusion: Confusion::at(&probs, &labels, DECISION_THRESHOLD),
        metrics,
        ci: bootstrap_ci(&probs, &labels, cfg.n_bootstrap, cfg.seed)?,
        nonconverged_folds,
    })
}

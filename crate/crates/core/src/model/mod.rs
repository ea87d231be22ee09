//! Class-balanced L2 logistic regression over the feature table, evaluated by
//! leave-one-out cross-validation, with bootstrap intervals and linear SHAP.

mod cv;
mod logreg;
mod metrics;
mod preprocess;
mod shap;

pub use cv::{fit_fold, loo_cv, positive_labels, select_features, CvReport, FeatureSet, FoldFit, ModelConfig, Prediction};
pub use logreg::{balanced_weights, fit, gradient, objective, sigmoid, ClassWeights, LogRegModel, GRAD_TOL, MAX_ITER};
pub use metrics::{
    auc_rank, auc_trapezoid, average_precision, bootstrap_ci, pr_curve, roc_curve, BootstrapCi, Confusion, Interval,
    Metrics, PrPoint, RocPoint, BOOTSTRAP_RNG, DECISION_THRESHOLD,
};
pub use preprocess::Preprocessor;
pub use shap::{group_ranks, linear_shap, GroupRank, GroupedRanks, ShapFeature, ShapReport};

//! Stratified cross-validation, threshold metrics and ROC analysis.

mod cv;
mod metrics;

pub use cv::{
    check_no_leakage, compare_feature_sets, prepare_training, run_cv, select, stratified_folds, train_final,
    Comparison, CvConfig, CvReport, FeatureSetResult, FinalModel, Fold, FoldResult, MetricSummary,
    PreparedTraining, SelectionScope,
};
pub use metrics::{confusion_metrics, fmt12, roc_auc, ConfusionMatrix, MetricSet, RocCurve};

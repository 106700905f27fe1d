use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion_metrics, roc_auc, ConfusionMatrix, MetricSet, RocCurve};
use crate::classifiers::{Model, ModelSpec};
use crate::data::{class_counts, Dataset, Label};
use crate::error::{Error, Result};
use crate::imputation::{impute_from_donors, knn_impute, ImputeConfig};
use crate::resampling::{RebalanceAudit, ResamplingConfig, RowOrigin};
use crate::selection::{backward_eliminate, screen_features, SelectionConfig, SelectionMode, SelectionReport};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold split. Each class is shuffled and dealt round-robin; the
/// majority deal starts where the minority deal stopped so fold sizes differ by
/// at most one row.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let counts = class_counts(labels)?;
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if k > counts.n_minority {
        return Err(Error::InvalidInput(format!(
            "{k} folds but only {} minority rows; every fold needs one",
            counts.n_minority
        )));
    }
    let mut assign = vec![0usize; labels.len()];
    for (stream, label, offset) in [
        (0, counts.minority_label, 0),
        (1, counts.majority_label(), counts.n_minority % k),
    ] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut seeding::child_rng(seed, stream));
        for (pos, &i) in idx.iter().enumerate() {
            assign[i] = (pos + offset) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assign[i] == f);
            Fold { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    /// Use every feature.
    None,
    /// Screen inside each training fold.
    PerFold,
    /// Screen once on the whole dataset before splitting.
    FullDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub selection_scope: SelectionScope,
    pub selection: SelectionConfig,
    pub impute: ImputeConfig,
    /// Applied to training folds only. The seed inside is replaced by a per-fold seed.
    pub rebalance: Option<ResamplingConfig>,
    pub model: ModelSpec,
}

impl CvConfig {
    pub fn new(model: ModelSpec, seed: u64) -> Self {
        CvConfig {
            k: 5,
            seed,
            selection_scope: SelectionScope::PerFold,
            selection: SelectionConfig::default(),
            impute: ImputeConfig::default(),
            rebalance: Some(ResamplingConfig::new(seed)),
            model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_indices: Vec<usize>,
    /// Original rows feeding the training set, including SMOTE parents.
    #[serde(skip)]
    pub train_sources: Vec<usize>,
    pub n_synthetic: usize,
    pub features: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    pub roc: RocCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rebalance: Option<RebalanceAudit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fnr: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: CvConfig,
    pub folds: Vec<FoldResult>,
    pub mean: MetricSummary,
    /// Sample standard deviation (n - 1) across folds.
    pub std: MetricSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_selection: Option<SelectionReport>,
}

fn summarize(folds: &[FoldResult]) -> (MetricSummary, MetricSummary) {
    let stats = |f: &dyn Fn(&FoldResult) -> f64| {
        let xs: Vec<f64> = folds.iter().map(f).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let s = stats(&|f| f.metrics.sensitivity);
    let p = stats(&|f| f.metrics.specificity);
    let m = stats(&|f| f.metrics.fnr);
    let a = stats(&|f| f.roc.auc);
    (
        MetricSummary {
            sensitivity: s.0,
            specificity: p.0,
            fnr: m.0,
            auc: a.0,
        },
        MetricSummary {
            sensitivity: s.1,
            specificity: p.1,
            fnr: m.1,
            auc: a.1,
        },
    )
}

/// Fails if a test row is repeated or if any row feeding training (directly or
/// as a SMOTE parent) is also a test row.
pub fn check_no_leakage(test: &[usize], train_origins: &[RowOrigin]) -> Result<()> {
    let mut seen = HashSet::with_capacity(test.len());
    for &i in test {
        if !seen.insert(i) {
            return Err(Error::Leakage(format!("row {i} appears twice in a test fold")));
        }
    }
    for o in train_origins {
        let hit = match *o {
            RowOrigin::Original(i) => seen.contains(&i).then_some(i),
            RowOrigin::Synthetic { seed, neighbor } => {
                [seed, neighbor].into_iter().find(|i| seen.contains(i))
            }
        };
        if let Some(i) = hit {
            return Err(Error::Leakage(format!(
                "row {i} of the test fold also feeds the training set ({o:?})"
            )));
        }
    }
    Ok(())
}

/// Screening in the configured mode. Backward elimination scores candidate
/// sets with an inner cross-validation on `d`.
pub fn select(d: &Dataset, cfg: &CvConfig, seed: u64) -> Result<SelectionReport> {
    match cfg.selection.mode {
        SelectionMode::FixedThreshold => screen_features(d, &cfg.selection),
        SelectionMode::BackwardElimination => {
            let inner = CvConfig {
                selection_scope: SelectionScope::None,
                seed,
                ..cfg.clone()
            };
            backward_eliminate(d, |names| Ok(run_cv(&d.project(names)?, &inner)?.mean.auc), &cfg.selection)
        }
    }
}

fn selected_or_fail(report: &SelectionReport, ctx: &str) -> Result<Vec<String>> {
    let names = report.selected_names();
    if names.is_empty() {
        return Err(Error::Degenerate(format!("no feature passed selection ({ctx})")));
    }
    Ok(names)
}

/// A training set after selection, imputation and rebalancing.
#[derive(Debug, Clone)]
pub struct PreparedTraining {
    pub dataset: Dataset,
    /// Parallel to `dataset.rows()`, indexed into the input of [`prepare_training`].
    pub origins: Vec<RowOrigin>,
    pub features: Vec<String>,
    pub selection: Option<SelectionReport>,
    pub rebalance: Option<RebalanceAudit>,
}

/// Selection (if `features` is `None` and the scope asks for it), imputation and rebalancing.
pub fn prepare_training(train: &Dataset, cfg: &CvConfig, features: Option<Vec<String>>, seed: u64) -> Result<PreparedTraining> {
    let (features, selection) = match (features, cfg.selection_scope) {
        (Some(f), _) => (f, None),
        (None, SelectionScope::None) => (train.schema().feature_names(), None),
        (None, _) => {
            let report = select(train, cfg, seeding::derive(seed, 5)).map_err(|e| e.in_stage("selection"))?;
            (selected_or_fail(&report, "training data")?, Some(report))
        }
    };
    let projected = train.project(&features)?;
    let imputed = knn_impute(&projected, &cfg.impute, seeding::derive(seed, 1)).map_err(|e| e.in_stage("imputation"))?;
    let (dataset, origins, rebalance) = match &cfg.rebalance {
        Some(rc) => {
            let rc = ResamplingConfig {
                seed: seeding::derive(seed, 3),
                ..rc.clone()
            };
            let r = crate::resampling::rebalance(&imputed, &rc).map_err(|e| e.in_stage("rebalancing"))?;
            (r.dataset, r.origins, Some(r.audit))
        }
        None => {
            let origins = (0..imputed.n_rows()).map(RowOrigin::Original).collect();
            (imputed, origins, None)
        }
    };
    Ok(PreparedTraining {
        dataset,
        origins,
        features,
        selection,
        rebalance,
    })
}

fn run_fold(d: &Dataset, fold: &Fold, f: usize, cfg: &CvConfig, fixed: Option<&[String]>) -> Result<FoldResult> {
    let seed = seeding::derive(cfg.seed, 100 + f as u64);
    let train_raw = d.subset(&fold.train);
    let prep = prepare_training(&train_raw, cfg, fixed.map(<[String]>::to_vec), seed)?;

    let global: Vec<RowOrigin> = prep
        .origins
        .iter()
        .map(|o| match *o {
            RowOrigin::Original(i) => RowOrigin::Original(fold.train[i]),
            RowOrigin::Synthetic { seed, neighbor } => RowOrigin::Synthetic {
                seed: fold.train[seed],
                neighbor: fold.train[neighbor],
            },
        })
        .collect();
    check_no_leakage(&fold.test, &global)?;

    // test rows borrow donors from the (un-rebalanced) training fold only
    let donors = train_raw.project(&prep.features)?;
    let test = impute_from_donors(&d.subset(&fold.test).project(&prep.features)?, &donors, &cfg.impute, seeding::derive(seed, 2))
        .map_err(|e| e.in_stage("imputation"))?
        .dataset;

    let model: Model = cfg
        .model
        .fit(&prep.dataset, seeding::derive(seed, 4))
        .map_err(|e| e.in_stage("training"))?;
    let scores = model.predict_dataset(&test)?;
    let labels = test.labels()?;
    let confusion = ConfusionMatrix::from_scores(&scores, &labels, cfg.model.threshold)?;
    let roc = roc_auc(&scores.iter().copied().zip(labels.iter().copied()).collect::<Vec<_>>())
        .map_err(|e| e.in_stage("evaluation"))?;
    let mut metrics = confusion_metrics(&confusion).map_err(|e| e.in_stage("evaluation"))?;
    metrics.auc = Some(roc.auc);

    let mut train_sources: Vec<usize> = global
        .iter()
        .flat_map(|o| match *o {
            RowOrigin::Original(i) => vec![i],
            RowOrigin::Synthetic { seed, neighbor } => vec![seed, neighbor],
        })
        .collect();
    train_sources.sort_unstable();
    train_sources.dedup();
    Ok(FoldResult {
        fold: f,
        n_train: prep.dataset.n_rows(),
        n_test: fold.test.len(),
        test_indices: fold.test.clone(),
        train_sources,
        n_synthetic: prep.rebalance.as_ref().map_or(0, |a| a.n_synthetic),
        features: prep.features,
        confusion,
        metrics,
        roc,
        selection: prep.selection,
        rebalance: prep.rebalance,
    })
}

/// Stratified k-fold evaluation. Imputation donors, selection and rebalancing
/// only ever see the training fold; the test fold is scored untouched apart
/// from imputation.
pub fn run_cv(d: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    cfg.selection.validate()?;
    if let Some(r) = &cfg.rebalance {
        r.validate()?;
    }
    let labels = d.labels()?;
    let folds = stratified_folds(&labels, cfg.k, seeding::derive(cfg.seed, 0))?;
    let full_selection = match cfg.selection_scope {
        SelectionScope::FullDataset => {
            Some(select(d, cfg, seeding::derive(cfg.seed, 5)).map_err(|e| e.in_stage("selection"))?)
        }
        _ => None,
    };
    let fixed = match &full_selection {
        Some(r) => Some(selected_or_fail(r, "full dataset")?),
        None => None,
    };
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| run_fold(d, fold, f, cfg, fixed.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = summarize(&results);
    Ok(CvReport {
        config: cfg.clone(),
        folds: results,
        mean,
        std,
        full_selection,
    })
}

/// Model fitted on the whole cohort with the same preparation as a training fold.
#[derive(Debug, Clone)]
pub struct FinalModel {
    pub model: Model,
    pub prepared: PreparedTraining,
}

pub fn train_final(d: &Dataset, cfg: &CvConfig) -> Result<FinalModel> {
    let seed = seeding::derive(cfg.seed, 99);
    let prepared = prepare_training(d, cfg, None, seed)?;
    let model = cfg
        .model
        .fit(&prepared.dataset, seeding::derive(seed, 4))
        .map_err(|e| e.in_stage("training"))?;
    Ok(FinalModel { model, prepared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetResult {
    pub name: String,
    pub features: Vec<String>,
    pub report: CvReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sets: Vec<FeatureSetResult>,
}

impl Comparison {
    /// One column per feature set, one row per metric, `mean (std)`.
    pub fn render_table(&self) -> String {
        let width = self.sets.iter().map(|s| s.name.len()).max().unwrap_or(0).max(13);
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "metric");
        for s in &self.sets {
            let _ = write!(out, "  {:>width$}", s.name);
        }
        out.push('\n');
        let _ = write!(out, "{:<12}", "n_features");
        for s in &self.sets {
            let _ = write!(out, "  {:>width$}", s.features.len());
        }
        out.push('\n');
        type Pick = fn(&MetricSummary) -> f64;
        let rows: [(&str, Pick); 4] = [
            ("sensitivity", |m| m.sensitivity),
            ("specificity", |m| m.specificity),
            ("fnr", |m| m.fnr),
            ("auc", |m| m.auc),
        ];
        for (name, pick) in rows {
            let _ = write!(out, "{name:<12}");
            for s in &self.sets {
                let cell = format!("{:.2} ({:.2})", pick(&s.report.mean), pick(&s.report.std));
                let _ = write!(out, "  {cell:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Cross-validates each named feature set on identical folds and seeds.
pub fn compare_feature_sets(d: &Dataset, sets: &[(String, Vec<String>)], cfg: &CvConfig) -> Result<Comparison> {
    let mut out = Vec::with_capacity(sets.len());
    for (name, features) in sets {
        let projected = d
            .project(features)
            .map_err(|e| Error::InvalidInput(format!("feature set '{name}': {e}")))?;
        let report = run_cv(&projected, cfg)?;
        out.push(FeatureSetResult {
            name: name.clone(),
            features: features.clone(),
            report,
        });
    }
    Ok(Comparison { sets: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ModelKind;
    use crate::data::{Cell, Feature, FeatureVector, Schema};

    fn labels(n_min: usize, n_maj: usize) -> Vec<Label> {
        (0..n_min + n_maj)
            .map(|i| if i % (n_min + n_maj) < n_min { Label::Var } else { Label::NonVar })
            .collect()
    }

    #[test]
    fn cohort_sized_folds() {
        let l = labels(61, 650);
        let folds = stratified_folds(&l, 5, 3).unwrap();
        let mut all: Vec<usize> = Vec::new();
        for f in &folds {
            assert!((142..=143).contains(&f.test.len()), "{}", f.test.len());
            let m = f.test.iter().filter(|&&i| l[i] == Label::Var).count();
            assert!((12..=13).contains(&m));
            assert_eq!(f.train.len() + f.test.len(), 711);
            all.extend(&f.test);
        }
        all.sort_unstable();
        assert_eq!(all, (0..711).collect::<Vec<_>>());
    }

    #[test]
    fn fold_count_limits() {
        let l = labels(3, 3);
        assert!(stratified_folds(&l, 6, 0).is_err());
        assert!(stratified_folds(&l, 1, 0).is_err());
        for f in stratified_folds(&l, 3, 0).unwrap() {
            let m = f.test.iter().filter(|&&i| l[i] == Label::Var).count();
            assert_eq!((f.test.len(), m), (2, 1));
        }
    }

    #[test]
    fn folds_are_seeded() {
        let l = labels(20, 80);
        assert_eq!(stratified_folds(&l, 5, 1).unwrap(), stratified_folds(&l, 5, 1).unwrap());
        assert_ne!(stratified_folds(&l, 5, 1).unwrap(), stratified_folds(&l, 5, 2).unwrap());
    }

    #[test]
    fn leakage_detection() {
        assert!(check_no_leakage(&[1, 2], &[RowOrigin::Original(0)]).is_ok());
        assert!(matches!(check_no_leakage(&[1, 1], &[]), Err(Error::Leakage(_))));
        assert!(matches!(check_no_leakage(&[3], &[RowOrigin::Original(3)]), Err(Error::Leakage(_))));
        let syn = RowOrigin::Synthetic { seed: 0, neighbor: 5 };
        assert!(matches!(check_no_leakage(&[5], &[syn]), Err(Error::Leakage(_))));
    }

    #[test]
    fn separable_tiny_dataset() {
        let schema = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let rows = (0..12)
            .map(|i| {
                let y = usize::from(i % 2 == 0);
                FeatureVector::new(vec![Cell::Number(y as f64 * 10.0 + i as f64 * 0.1)], Some(Label::from_index(y)))
            })
            .collect();
        let d = Dataset::new(schema, rows, "t").unwrap();
        let mut cfg = CvConfig::new(ModelSpec::new(ModelKind::BaselineLr), 1);
        cfg.k = 2;
        cfg.rebalance = None;
        cfg.selection_scope = SelectionScope::None;
        let r = run_cv(&d, &cfg).unwrap();
        assert_eq!(r.mean.auc, 1.0);
        assert_eq!(r.folds.len(), 2);
    }
}

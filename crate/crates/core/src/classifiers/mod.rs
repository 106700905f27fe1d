//! Binary classifiers returning Pr(VAr | record), plus model persistence.

mod logistic;
mod naive_bayes;
mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Dataset, Feature, FeatureKind, FeatureVector, Label, Schema};
use crate::error::{Error, Result};
use crate::seeding;

pub use logistic::{fit_logistic, LogisticConfig, LogisticModel, LogisticObjective};
pub use naive_bayes::{fit_naive_bayes, NaiveBayesConfig, NaiveBayesModel};
pub use tree::{fit_forest, fit_tree, ForestConfig, ForestModel, Node, SplitRule, TreeConfig, TreeModel};

/// One-hot encoding of nominal features (every category keeps a column);
/// continuous features pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    features: Vec<Feature>,
    offsets: Vec<usize>,
    dim: usize,
}

impl Encoding {
    pub fn new(features: &[Feature]) -> Self {
        let mut offsets = Vec::with_capacity(features.len());
        let mut dim = 0;
        for f in features {
            offsets.push(dim);
            dim += f.kind.n_categories().unwrap_or(1);
        }
        Encoding {
            features: features.to_vec(),
            offsets,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Feature index and, for one-hot columns, the category behind `column`.
    pub fn column_source(&self, column: usize) -> Option<(usize, Option<usize>)> {
        if column >= self.dim {
            return None;
        }
        let j = self.offsets.partition_point(|&o| o <= column) - 1;
        Some(match self.features[j].kind {
            FeatureKind::Continuous => (j, None),
            FeatureKind::Nominal { .. } => (j, Some(column - self.offsets[j])),
        })
    }

    /// Encodes a complete, conforming row.
    pub fn encode(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        check_row(&self.features, v)?;
        let mut out = vec![0.0; self.dim];
        for (j, cell) in v.values.iter().enumerate() {
            match cell {
                Cell::Number(x) => out[self.offsets[j]] = *x,
                Cell::Category(c) => out[self.offsets[j] + c] = 1.0,
                Cell::Missing => unreachable!("checked complete"),
            }
        }
        Ok(out)
    }
}

/// Rejects rows with missing cells or cells that do not match `features`.
pub(crate) fn check_row(features: &[Feature], v: &FeatureVector) -> Result<()> {
    v.conforms(features)
        .map_err(|m| Error::ModelMismatch(format!("input does not match the model's features: {m}")))?;
    if let Some(j) = v.values.iter().position(Cell::is_missing) {
        return Err(Error::InvalidInput(format!(
            "feature '{}' is missing; impute before scoring",
            features[j].name
        )));
    }
    Ok(())
}

/// Labels of a complete training set that contains both classes.
pub(crate) fn training_labels(train: &Dataset, model: &str) -> Result<Vec<Label>> {
    if train.has_missing() {
        return Err(Error::InvalidInput(format!("{model} training data has missing cells; impute first")));
    }
    let labels = train.labels()?;
    let n1 = labels.iter().filter(|&&l| l == Label::Var).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(Error::Degenerate(format!("{model} needs both classes in the training data")));
    }
    Ok(labels)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationRule {
    MeanProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<Model>,
    pub rule: CombinationRule,
    pub threshold: f64,
}

impl EnsembleModel {
    pub fn new(members: Vec<Model>, threshold: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidInput("an ensemble needs at least one member".into()));
        }
        check_threshold(threshold)?;
        let features = members[0].features();
        if members.iter().any(|m| m.features() != features) {
            return Err(Error::ModelMismatch("ensemble members were trained on different features".into()));
        }
        Ok(EnsembleModel {
            members,
            rule: CombinationRule::MeanProbability,
            threshold,
        })
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold must lie in (0, 1), got {t}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticModel),
    NaiveBayes(NaiveBayesModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Ensemble(EnsembleModel),
}

impl Model {
    pub fn features(&self) -> &[Feature] {
        match self {
            Model::Logistic(m) => m.encoding.features(),
            Model::NaiveBayes(m) => &m.features,
            Model::Tree(m) => &m.features,
            Model::Forest(m) => m.features(),
            Model::Ensemble(m) => m.members[0].features(),
        }
    }

    /// Pr(VAr | v).
    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64> {
        match self {
            Model::Logistic(m) => m.predict_proba(v),
            Model::NaiveBayes(m) => m.predict_proba(v),
            Model::Tree(m) => m.predict_proba(v),
            Model::Forest(m) => m.predict_proba(v),
            Model::Ensemble(e) => {
                let mut sum = 0.0;
                for m in &e.members {
                    sum += m.predict_proba(v)?;
                }
                Ok(sum / e.members.len() as f64)
            }
        }
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        if d.schema().features() != self.features() {
            return Err(Error::ModelMismatch(
                "dataset features differ from those the model was trained on".into(),
            ));
        }
        d.rows()
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                self.predict_proba(r)
                    .map_err(|e| Error::InvalidInput(format!("row {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Decision threshold carried by the model (ensembles store one; others use 0.5).
    pub fn threshold(&self) -> f64 {
        match self {
            Model::Ensemble(e) => e.threshold,
            _ => 0.5,
        }
    }
}

/// VAr iff `Pr(VAr | v) >= threshold`.
pub fn classify(model: &Model, v: &FeatureVector, threshold: f64) -> Result<Label> {
    check_threshold(threshold)?;
    Ok(label_at(model.predict_proba(v)?, threshold))
}

pub fn label_at(p: f64, threshold: f64) -> Label {
    if p >= threshold {
        Label::Var
    } else {
        Label::NonVar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BaselineLr,
    BaselineNb,
    BaselineTree,
    BaselineForest,
    Ensemble,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BaselineLr => "baseline-lr",
            ModelKind::BaselineNb => "baseline-nb",
            ModelKind::BaselineTree => "baseline-tree",
            ModelKind::BaselineForest => "baseline-forest",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

/// Which model to fit and with what hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub logistic: LogisticConfig,
    pub naive_bayes: NaiveBayesConfig,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub threshold: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            logistic: LogisticConfig::default(),
            naive_bayes: NaiveBayesConfig::default(),
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            threshold: 0.5,
        }
    }

    pub fn fit(&self, train: &Dataset, seed: u64) -> Result<Model> {
        check_threshold(self.threshold)?;
        Ok(match self.kind {
            ModelKind::BaselineLr => Model::Logistic(fit_logistic(train, &self.logistic)?),
            ModelKind::BaselineNb => Model::NaiveBayes(fit_naive_bayes(train, &self.naive_bayes)?),
            ModelKind::BaselineTree => Model::Tree(fit_tree(train, &self.tree, seeding::derive(seed, 0))?),
            ModelKind::BaselineForest => Model::Forest(fit_forest(train, &self.forest, seed)?),
            ModelKind::Ensemble => Model::Ensemble(EnsembleModel::new(
                vec![
                    Model::Logistic(fit_logistic(train, &self.logistic)?),
                    Model::NaiveBayes(fit_naive_bayes(train, &self.naive_bayes)?),
                ],
                self.threshold,
            )?),
        })
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEcho {
    pub n_rows: usize,
    pub n_var: usize,
    pub n_non_var: usize,
    /// Free-form description of preprocessing applied before fitting.
    pub steps: Vec<String>,
}

/// A fitted model with enough context to refuse incompatible input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    /// Hash of the schema the cohort file is read with.
    pub input_schema_hash: String,
    pub input_schema: Schema,
    /// Features the model consumes, in order (a projection of the input schema).
    pub features: Vec<String>,
    pub spec: ModelSpec,
    pub seed: u64,
    pub training: TrainingEcho,
    pub model: Model,
}

impl SavedModel {
    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let hash = schema.hash();
        if hash != self.input_schema_hash {
            return Err(Error::ModelMismatch(format!(
                "schema hash {hash} does not match the model's {}",
                self.input_schema_hash
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str, source: &Path) -> Result<SavedModel> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::json(source.display().to_string(), e))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::ModelMismatch(format!(
                "{}: unsupported model format version {version:?} (expected {MODEL_FORMAT_VERSION})",
                source.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| Error::json(source.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<SavedModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn mixed_schema() -> Schema {
        Schema::new(
            vec![
                Feature::continuous("age"),
                Feature::nominal("nyha", ["I", "II", "III"]),
                Feature::continuous("lvot"),
            ],
            "var",
        )
        .unwrap()
    }

    #[test]
    fn encoding_layout() {
        let s = mixed_schema();
        let e = Encoding::new(s.features());
        assert_eq!(e.dim(), 5);
        assert_eq!(e.column_source(0), Some((0, None)));
        assert_eq!(e.column_source(3), Some((1, Some(2))));
        assert_eq!(e.column_source(4), Some((2, None)));
        assert_eq!(e.column_source(5), None);
        let v = FeatureVector::new(vec![Cell::Number(40.0), Cell::Category(1), Cell::Number(-2.0)], None);
        assert_eq!(e.encode(&v).unwrap(), vec![40.0, 0.0, 1.0, 0.0, -2.0]);
        let missing = FeatureVector::new(vec![Cell::Missing, Cell::Category(1), Cell::Number(-2.0)], None);
        assert!(e.encode(&missing).is_err());
        let short = FeatureVector::new(vec![Cell::Number(1.0)], None);
        assert!(matches!(e.encode(&short), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn classify_boundaries() {
        let s = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let m = Model::Logistic(LogisticModel::from_parts(s.features(), vec![0.0], vec![1.0], vec![1.0], 0.0).unwrap());
        let at = |x: f64| FeatureVector::new(vec![Cell::Number(x)], None);
        // logit(0.95) and logit(0.45)
        let hi = (0.95f64 / 0.05).ln();
        let lo = (0.45f64 / 0.55).ln();
        assert_eq!(classify(&m, &at(hi), 0.5).unwrap(), Label::Var);
        assert_eq!(classify(&m, &at(lo), 0.5).unwrap(), Label::NonVar);
        assert_eq!(classify(&m, &at(0.0), 0.5).unwrap(), Label::Var);
        assert_eq!(label_at(0.5, 0.5), Label::Var);
        assert!(classify(&m, &at(0.0), 1.0).is_err());
    }

    #[test]
    fn ensemble_is_member_mean() {
        let s = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let member = |p: f64| {
            Model::Logistic(LogisticModel::from_parts(s.features(), vec![0.0], vec![1.0], vec![0.0], logit(p)).unwrap())
        };
        let e = Model::Ensemble(EnsembleModel::new(vec![member(0.6), member(0.8)], 0.5).unwrap());
        let v = FeatureVector::new(vec![Cell::Number(3.0)], None);
        assert!((e.predict_proba(&v).unwrap() - 0.7).abs() < 1e-15);
        assert!(EnsembleModel::new(vec![], 0.5).is_err());
    }

    #[test]
    fn saved_model_round_trip_and_version() {
        let s = Schema::new(vec![Feature::continuous("x")], "y").unwrap();
        let m = Model::Logistic(LogisticModel::from_parts(s.features(), vec![0.0], vec![1.0], vec![0.5], 0.1).unwrap());
        let saved = SavedModel {
            format_version: MODEL_FORMAT_VERSION,
            input_schema_hash: s.hash(),
            input_schema: s.clone(),
            features: vec!["x".into()],
            spec: ModelSpec::new(ModelKind::BaselineLr),
            seed: 3,
            training: TrainingEcho {
                n_rows: 10,
                n_var: 2,
                n_non_var: 8,
                steps: vec![],
            },
            model: m,
        };
        let text = serde_json::to_string(&saved).unwrap();
        let back = SavedModel::from_json(&text, Path::new("m.json")).unwrap();
        assert_eq!(back, saved);
        back.check_schema(&s).unwrap();
        let other = Schema::new(vec![Feature::continuous("z")], "y").unwrap();
        assert!(back.check_schema(&other).is_err());
        let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
        assert!(matches!(
            SavedModel::from_json(&bumped, Path::new("m.json")),
            Err(Error::ModelMismatch(_))
        ));
    }
}

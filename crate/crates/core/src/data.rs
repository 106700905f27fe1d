//! Cohort data model: schema, cells, labelled feature vectors, and CSV ingestion.
//!
//! A [`Dataset`] is immutable once built. Every row is checked against the
//! schema at construction, so downstream modules can index cells by feature
//! position without re-validating kinds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_MISSING_TOKENS: [&str; 3] = ["", "NA", "NaN"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Nominal { categories: Vec<String> },
    Continuous,
}

impl FeatureKind {
    pub fn is_continuous(&self) -> bool {
        matches!(self, FeatureKind::Continuous)
    }

    pub fn n_categories(&self) -> Option<usize> {
        match self {
            FeatureKind::Nominal { categories } => Some(categories.len()),
            FeatureKind::Continuous => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Nominal { .. } => "nominal",
            FeatureKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl Feature {
    pub fn continuous(name: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous,
        }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Nominal {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        }
    }
}

/// Binary outcome. `Var` (1) is the arrhythmia class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    NonVar,
    Var,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::NonVar => 0,
            Label::Var => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::NonVar
        } else {
            Label::Var
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::NonVar => Label::Var,
            Label::Var => Label::NonVar,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::NonVar),
            1 => Ok(Label::Var),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

fn default_label_aliases() -> BTreeMap<String, Label> {
    [
        ("0", Label::NonVar),
        ("1", Label::Var),
        ("no", Label::NonVar),
        ("yes", Label::Var),
        ("non-VAr", Label::NonVar),
        ("VAr", Label::Var),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Deserialize)]
struct RawSchema {
    features: Vec<Feature>,
    label: String,
    #[serde(default = "default_label_aliases")]
    label_aliases: BTreeMap<String, Label>,
    #[serde(default)]
    excluded: Vec<String>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Schema> {
        let mut schema = Schema::with_aliases(raw.features, raw.label, raw.label_aliases)?;
        schema.excluded = raw.excluded;
        schema.validate()?;
        Ok(schema)
    }
}

/// Ordered feature list plus the name of the label column.
///
/// Feature order is canonical: every [`FeatureVector`] stores its cells in
/// exactly this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    features: Vec<Feature>,
    label: String,
    label_aliases: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    excluded: Vec<String>,
}

impl Schema {
    pub fn new(features: Vec<Feature>, label: impl Into<String>) -> Result<Self> {
        Self::with_aliases(features, label, default_label_aliases())
    }

    pub fn with_aliases(
        features: Vec<Feature>,
        label: impl Into<String>,
        label_aliases: BTreeMap<String, Label>,
    ) -> Result<Self> {
        let mut label_aliases = label_aliases;
        label_aliases.insert("0".into(), Label::NonVar);
        label_aliases.insert("1".into(), Label::Var);
        let schema = Schema {
            features,
            label: label.into(),
            label_aliases,
            excluded: Vec::new(),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name '{}'", f.name)));
            }
            if let FeatureKind::Nominal { categories } = &f.kind {
                if categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "nominal feature '{}' must declare at least 2 categories",
                        f.name
                    )));
                }
                let unique: HashSet<_> = categories.iter().collect();
                if unique.len() != categories.len() {
                    return Err(Error::Schema(format!(
                        "nominal feature '{}' has duplicate category labels",
                        f.name
                    )));
                }
            }
            if self.excluded.contains(&f.name) {
                return Err(Error::Schema(format!(
                    "feature '{}' is on the excluded list",
                    f.name
                )));
            }
        }
        if seen.contains(self.label.as_str()) {
            return Err(Error::Schema(format!(
                "label '{}' is also listed as a feature",
                self.label
            )));
        }
        Ok(())
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn label_name(&self) -> &str {
        &self.label
    }

    pub fn label_aliases(&self) -> &BTreeMap<String, Label> {
        &self.label_aliases
    }

    /// Names removed as outcome descriptors; never ingested.
    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn parse_label(&self, raw: &str) -> Option<Label> {
        self.label_aliases.get(raw.trim()).copied()
    }

    /// Schema restricted to `keep`, in `keep` order.
    pub fn project(&self, keep: &[String]) -> Result<Schema> {
        if keep.is_empty() {
            return Err(Error::InvalidInput(
                "projection onto an empty feature list".into(),
            ));
        }
        let mut features = Vec::with_capacity(keep.len());
        for name in keep {
            if self.excluded.contains(name) {
                return Err(Error::InvalidInput(format!(
                    "feature '{name}' was excluded as an outcome variable"
                )));
            }
            let idx = self
                .index_of(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown feature '{name}'")))?;
            features.push(self.features[idx].clone());
        }
        let schema = Schema {
            features,
            label: self.label.clone(),
            label_aliases: self.label_aliases.clone(),
            excluded: self.excluded.clone(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub(crate) fn without(&self, drop: &HashSet<&str>) -> Schema {
        let mut excluded = self.excluded.clone();
        excluded.extend(drop.iter().map(|s| s.to_string()));
        excluded.sort();
        excluded.dedup();
        Schema {
            features: self
                .features
                .iter()
                .filter(|f| !drop.contains(f.name.as_str()))
                .cloned()
                .collect(),
            label: self.label.clone(),
            label_aliases: self.label_aliases.clone(),
            excluded,
        }
    }

    /// Hex SHA-256 of the canonical JSON form; used to pair saved models with their input schema.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// On-disk schema file: the schema plus the tokens that mean "missing".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    #[serde(flatten)]
    pub schema: Schema,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect()
}

impl SchemaFile {
    pub fn new(schema: Schema) -> Self {
        SchemaFile {
            schema,
            missing_tokens: default_missing_tokens(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Number(f64),
    Category(usize),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn number(&self) -> Option<f64> {
        match self {
            Cell::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn category(&self) -> Option<usize> {
        match self {
            Cell::Category(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<Cell>,
    pub label: Option<Label>,
}

impl FeatureVector {
    pub fn new(values: Vec<Cell>, label: Option<Label>) -> Self {
        FeatureVector { values, label }
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|c| !c.is_missing())
    }

    /// Checks length and per-slot cell kinds against `features`.
    pub fn conforms(&self, features: &[Feature]) -> std::result::Result<(), String> {
        if self.values.len() != features.len() {
            return Err(format!(
                "vector has {} cells, schema has {} features",
                self.values.len(),
                features.len()
            ));
        }
        for (cell, f) in self.values.iter().zip(features) {
            match (cell, &f.kind) {
                (Cell::Missing, _) => {}
                (Cell::Number(x), FeatureKind::Continuous) if x.is_finite() => {}
                (Cell::Category(c), FeatureKind::Nominal { categories }) if *c < categories.len() => {}
                _ => return Err(format!("cell {cell:?} is invalid for feature '{}'", f.name)),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_minority: usize,
    pub n_majority: usize,
    pub minority_label: Label,
}

impl ClassCounts {
    pub fn majority_label(&self) -> Label {
        self.minority_label.other()
    }

    pub fn total(&self) -> usize {
        self.n_minority + self.n_majority
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<Schema>,
    rows: Vec<FeatureVector>,
    provenance: String,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<FeatureVector>, provenance: impl Into<String>) -> Result<Self> {
        Self::with_shared_schema(Arc::new(schema), rows, provenance)
    }

    pub fn with_shared_schema(
        schema: Arc<Schema>,
        rows: Vec<FeatureVector>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            row.conforms(schema.features())
                .map_err(|m| Error::InvalidInput(format!("row {i}: {m}")))?;
        }
        Ok(Dataset {
            schema,
            rows,
            provenance: provenance.into(),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().any(|r| !r.is_complete())
    }

    /// All labels, failing on the first unlabeled row.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.label
                    .ok_or_else(|| Error::InvalidInput(format!("row {i} has no label")))
            })
            .collect()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r.values[j])
    }

    /// Rows at `indices`, in that order. Indices may repeat.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_rows(&self, rows: Vec<FeatureVector>, provenance: impl Into<String>) -> Result<Dataset> {
        Dataset::with_shared_schema(Arc::clone(&self.schema), rows, provenance)
    }

    pub fn class_counts(&self) -> Result<ClassCounts> {
        class_counts(&self.labels()?)
    }

    pub fn project(&self, keep: &[String]) -> Result<Dataset> {
        let schema = self.schema.project(keep)?;
        let idx: Vec<usize> = keep
            .iter()
            .map(|n| self.schema.index_of(n).expect("validated by Schema::project"))
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                values: idx.iter().map(|&j| r.values[j]).collect(),
                label: r.label,
            })
            .collect();
        Ok(Dataset {
            schema: Arc::new(schema),
            rows,
            provenance: self.provenance.clone(),
        })
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::InvalidInput("cannot concatenate datasets with different schemas".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Dataset {
            schema: Arc::clone(&self.schema),
            rows,
            provenance: self.provenance.clone(),
        })
    }
}

/// Minority/majority counts; on a tie label 1 counts as the minority.
pub fn class_counts(labels: &[Label]) -> Result<ClassCounts> {
    let n1 = labels.iter().filter(|&&l| l == Label::Var).count();
    let n0 = labels.len() - n1;
    let counts = if n1 <= n0 {
        ClassCounts {
            n_minority: n1,
            n_majority: n0,
            minority_label: Label::Var,
        }
    } else {
        ClassCounts {
            n_minority: n0,
            n_majority: n1,
            minority_label: Label::NonVar,
        }
    };
    Ok(counts)
}

pub fn load_csv(path: &Path, schema: &Schema, missing_tokens: &[String]) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, missing_tokens, &path.display().to_string())
}

/// Parses cohort CSV from any reader. Columns are matched to the schema by header name.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, missing_tokens: &[String], source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidInput(format!("{source}: cannot read header: {e}")))?
        .clone();
    let header_pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut columns = Vec::with_capacity(schema.n_features());
    for f in schema.features() {
        let pos = header_pos
            .get(f.name.as_str())
            .ok_or_else(|| Error::Schema(format!("{source}: column '{}' is missing from the header", f.name)))?;
        columns.push(*pos);
    }
    let label_pos = header_pos.get(schema.label_name()).copied();
    if label_pos.is_none() {
        log::info!("{source}: no '{}' column; rows are unlabeled", schema.label_name());
    }
    for h in headers.iter() {
        if h != schema.label_name() && schema.index_of(h).is_none() {
            if schema.excluded().iter().any(|e| e == h) {
                log::info!("{source}: dropping excluded outcome column '{h}'");
            } else {
                log::warn!("{source}: ignoring column '{h}' not in schema");
            }
        }
    }

    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .features()
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Nominal { categories } => {
                Some(categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect())
            }
            FeatureKind::Continuous => None,
        })
        .collect();
    let is_missing = |s: &str| missing_tokens.iter().any(|t| t == s);

    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row_no = r + 1;
        let record = record.map_err(|e| Error::Cell {
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        let mut values = Vec::with_capacity(columns.len());
        for ((f, &pos), lookup) in schema.features().iter().zip(&columns).zip(&lookups) {
            let raw = record.get(pos).unwrap_or("");
            let cell_err = |message: String| Error::Cell {
                row: row_no,
                column: f.name.clone(),
                message,
            };
            if is_missing(raw) {
                values.push(Cell::Missing);
                continue;
            }
            let cell = match lookup {
                Some(map) => Cell::Category(
                    *map.get(raw)
                        .ok_or_else(|| cell_err(format!("unknown category '{raw}'")))?,
                ),
                None => {
                    let x: f64 = raw
                        .parse()
                        .map_err(|_| cell_err(format!("'{raw}' is not a number")))?;
                    if !x.is_finite() {
                        return Err(cell_err(format!("'{raw}' is not a finite number")));
                    }
                    Cell::Number(x)
                }
            };
            values.push(cell);
        }
        let label = match label_pos {
            None => None,
            Some(pos) => {
                let raw = record.get(pos).unwrap_or("");
                if is_missing(raw) {
                    None
                } else {
                    Some(schema.parse_label(raw).ok_or_else(|| Error::Cell {
                        row: row_no,
                        column: schema.label_name().to_string(),
                        message: format!("'{raw}' is not a recognised label"),
                    })?)
                }
            }
        };
        rows.push(FeatureVector { values, label });
    }
    Dataset::new(schema.clone(), rows, source.to_string())
}

/// Writes the dataset in schema column order, label last. Missing cells are empty,
/// numbers use the shortest round-trip representation.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    let mut header = d.schema().feature_names();
    header.push(d.schema().label_name().to_string());
    w.write_record(&header).map_err(csv_err)?;
    for row in d.rows() {
        let mut rec: Vec<String> = row
            .values
            .iter()
            .zip(d.schema().features())
            .map(|(c, f)| format_cell(c, &f.kind))
            .collect();
        rec.push(row.label.map(|l| l.index().to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(d, file)
}

pub fn format_cell(cell: &Cell, kind: &FeatureKind) -> String {
    match (cell, kind) {
        (Cell::Missing, _) => String::new(),
        (Cell::Number(x), _) => format!("{x}"),
        (Cell::Category(c), FeatureKind::Nominal { categories }) => categories[*c].clone(),
        (Cell::Category(c), FeatureKind::Continuous) => c.to_string(),
    }
}

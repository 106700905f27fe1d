//! Univariate feature screening against the class label.
//!
//! Continuous features are tested with Welch's t-test, nominal features with
//! information gain; each feature also gets a latent-normal association
//! coefficient (polyserial or polychoric) whose sign gives the direction of
//! the effect.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Dataset, FeatureKind, Label, Schema};
use crate::error::{Error, Result};
use crate::stats::{info_gain, polychoric, polyserial, welch_t, AssociationResult, ContingencyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    FixedThreshold,
    BackwardElimination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub p_threshold: f64,
    /// Bits.
    pub gain_threshold: f64,
    pub mode: SelectionMode,
    /// Absolute C-index drop that stops backward elimination.
    pub elimination_tolerance: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            p_threshold: 0.05,
            gain_threshold: 0.002,
            mode: SelectionMode::FixedThreshold,
            elimination_tolerance: 0.005,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_threshold > 0.0) || !(self.gain_threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "selection thresholds must be > 0 (p {}, gain {})",
                self.p_threshold, self.gain_threshold
            )));
        }
        if !(self.elimination_tolerance >= 0.0) {
            return Err(Error::InvalidInput("elimination tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    /// Position in the screened dataset's schema.
    pub index: usize,
    pub kind: String,
    /// Welch t (continuous, positive when the VAr mean is higher) or information gain (nominal).
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub gain: Option<f64>,
    pub association: Option<AssociationResult>,
    pub selected: bool,
    pub unevaluable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    /// Feature removed before this evaluation; `None` for the starting set.
    pub dropped: Option<String>,
    pub n_features: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationTrace {
    pub steps: Vec<EliminationStep>,
    pub best_score: f64,
    /// Smallest information gain among nominal features kept in the best set.
    pub effective_gain_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub config: SelectionConfig,
    pub n_rows: usize,
    /// Ascending p-value, then descending gain, unevaluable last.
    pub features: Vec<FeatureStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elimination: Option<EliminationTrace>,
}

impl SelectionReport {
    /// Selected feature names in schema order.
    pub fn selected_names(&self) -> Vec<String> {
        let mut sel: Vec<&FeatureStat> = self.features.iter().filter(|f| f.selected).collect();
        sel.sort_by_key(|f| f.index);
        sel.into_iter().map(|f| f.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureStat> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Plain-text table: variable, direction, type, p-value, gain, association, selected.
    pub fn render_table(&self) -> String {
        let width = self.features.iter().map(|f| f.name.len()).max().unwrap_or(8).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>3}  {:<10}  {:>10}  {:>9}  {:>11}  selected",
            "variable", "dir", "type", "p-value", "gain", "association"
        );
        let fmt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        for f in &self.features {
            let dir = match f.association {
                Some(a) if a.rho > 0.0 => "(+)",
                Some(a) if a.rho < 0.0 => "(-)",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>3}  {:<10}  {:>10}  {:>9}  {:>11}  {}",
                f.name,
                dir,
                f.kind,
                f.p_value.map_or("-".to_string(), |p| format!("{p:.2e}")),
                fmt(f.gain, 5),
                fmt(f.association.map(|a| a.rho), 3),
                if f.selected { "yes" } else if f.unevaluable { "n/a" } else { "no" },
            );
        }
        out
    }
}

fn screen_one(d: &Dataset, labels: &[Label], j: usize, cfg: &SelectionConfig) -> FeatureStat {
    let feature = &d.schema().features()[j];
    let mut stat = FeatureStat {
        name: feature.name.clone(),
        index: j,
        kind: feature.kind.name().to_string(),
        statistic: None,
        p_value: None,
        gain: None,
        association: None,
        selected: false,
        unevaluable: false,
        warnings: Vec::new(),
    };
    match &feature.kind {
        FeatureKind::Continuous => {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (cell, &l) in d.column(j).zip(labels) {
                if let Cell::Number(x) = cell {
                    match l {
                        Label::Var => pos.push(*x),
                        Label::NonVar => neg.push(*x),
                    }
                    xs.push(*x);
                    ys.push(l);
                }
            }
            if pos.len() < 2 || neg.len() < 2 {
                stat.unevaluable = true;
                stat.warnings
                    .push(format!("fewer than 2 observed values in a class ({} VAr, {} non-VAr)", pos.len(), neg.len()));
                log::warn!("feature '{}' is unevaluable: too few observed values per class", feature.name);
                return stat;
            }
            match welch_t(&pos, &neg) {
                Ok(w) => {
                    stat.statistic = Some(w.t);
                    stat.p_value = Some(w.p_two_sided);
                    stat.selected = w.p_two_sided <= cfg.p_threshold;
                }
                Err(e) => {
                    stat.unevaluable = true;
                    stat.warnings.push(e.to_string());
                    log::warn!("feature '{}' is unevaluable: {e}", feature.name);
                    return stat;
                }
            }
            match polyserial(&xs, &ys) {
                Ok(a) => stat.association = Some(a),
                Err(e) => stat.warnings.push(format!("association: {e}")),
            }
        }
        FeatureKind::Nominal { categories } => {
            let values: Vec<Option<usize>> = d.column(j).map(Cell::category).collect();
            match info_gain(&values, labels) {
                Ok(g) => {
                    stat.statistic = Some(g.gain);
                    stat.gain = Some(g.gain);
                    stat.selected = g.gain >= cfg.gain_threshold;
                }
                Err(e) => {
                    stat.unevaluable = true;
                    stat.warnings.push(e.to_string());
                    return stat;
                }
            }
            let mut counts = vec![vec![0u64; 2]; categories.len()];
            for (v, &l) in values.iter().zip(labels) {
                if let Some(c) = v {
                    counts[*c][l.index()] += 1;
                }
            }
            let one_sided: Vec<&str> = counts
                .iter()
                .zip(categories)
                .filter(|(c, _)| (c[0] == 0) != (c[1] == 0))
                .map(|(_, name)| name.as_str())
                .collect();
            if !one_sided.is_empty() {
                let msg = format!("categories observed in only one class: {}", one_sided.join(", "));
                log::warn!("feature '{}': {msg}", feature.name);
                stat.warnings.push(msg);
            }
            if let Some(table) = ContingencyTable::new(counts).ok().and_then(|t| t.without_empty_margins()) {
                match polychoric(&table) {
                    Ok(a) => stat.association = Some(a),
                    Err(e) => stat.warnings.push(format!("association: {e}")),
                }
            }
        }
    }
    stat
}

fn order_report(features: &mut [FeatureStat]) {
    features.sort_by(|a, b| {
        let rank = |f: &FeatureStat| match (f.unevaluable, f.p_value) {
            (true, _) => 2,
            (false, Some(_)) => 0,
            (false, None) => 1,
        };
        rank(a)
            .cmp(&rank(b))
            .then_with(|| match (a.p_value, b.p_value) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => std::cmp::Ordering::Equal,
            })
            .then_with(|| match (a.gain, b.gain) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                _ => std::cmp::Ordering::Equal,
            })
            .then(a.index.cmp(&b.index))
    });
}

/// Screens every feature with fixed thresholds. Missing cells are dropped pairwise.
pub fn screen_features(d: &Dataset, cfg: &SelectionConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    let labels = d.labels()?;
    let counts = d.class_counts()?;
    if counts.n_minority < 2 {
        return Err(Error::Degenerate(format!(
            "screening needs at least 2 rows per class, minority has {}",
            counts.n_minority
        )));
    }
    let mut features: Vec<FeatureStat> = (0..d.schema().n_features())
        .into_par_iter()
        .map(|j| screen_one(d, &labels, j, cfg))
        .collect();
    order_report(&mut features);
    Ok(SelectionReport {
        config: SelectionConfig {
            mode: SelectionMode::FixedThreshold,
            ..cfg.clone()
        },
        n_rows: d.n_rows(),
        features,
        elimination: None,
    })
}

/// Backward elimination over nominal features.
///
/// Starts from the continuous features passing the p-value threshold plus every
/// evaluable nominal feature, then repeatedly removes the lowest-gain nominal
/// feature and re-scores with `eval` (given the included names in schema order).
/// Stops at the first score more than `elimination_tolerance` below the best
/// seen; equal scores favour the smaller set.
pub fn backward_eliminate<F>(d: &Dataset, mut eval: F, cfg: &SelectionConfig) -> Result<SelectionReport>
where
    F: FnMut(&[String]) -> Result<f64>,
{
    let mut report = screen_features(d, cfg)?;
    let mut nominal: Vec<&FeatureStat> = report
        .features
        .iter()
        .filter(|f| f.gain.is_some() && !f.unevaluable)
        .collect();
    // lowest gain last so it pops first
    nominal.sort_by(|a, b| b.gain.unwrap().total_cmp(&a.gain.unwrap()).then(a.index.cmp(&b.index)));
    let mut included: Vec<&FeatureStat> = report
        .features
        .iter()
        .filter(|f| f.p_value.is_some() && f.selected)
        .chain(nominal.iter().copied())
        .collect();
    included.sort_by_key(|f| f.index);
    if included.is_empty() {
        return Err(Error::Degenerate("no candidate features for backward elimination".into()));
    }
    let names = |set: &[&FeatureStat]| set.iter().map(|f| f.name.clone()).collect::<Vec<_>>();

    let mut steps = Vec::new();
    let score = eval(&names(&included))?;
    steps.push(EliminationStep {
        dropped: None,
        n_features: included.len(),
        score,
    });
    let mut best_score = score;
    let mut best: Vec<&FeatureStat> = included.clone();
    while included.len() > 1 {
        let Some(drop) = nominal.pop() else { break };
        included.retain(|f| f.index != drop.index);
        let score = eval(&names(&included))?;
        steps.push(EliminationStep {
            dropped: Some(drop.name.clone()),
            n_features: included.len(),
            score,
        });
        if score < best_score - cfg.elimination_tolerance {
            break;
        }
        if score >= best_score {
            best_score = score;
            best = included.clone();
        }
    }

    let keep: HashSet<usize> = best.iter().map(|f| f.index).collect();
    let effective = best.iter().filter_map(|f| f.gain).min_by(f64::total_cmp);
    for f in &mut report.features {
        f.selected = keep.contains(&f.index);
    }
    report.config.mode = SelectionMode::BackwardElimination;
    report.elimination = Some(EliminationTrace {
        steps,
        best_score,
        effective_gain_threshold: effective,
    });
    Ok(report)
}

/// Removes outcome descriptors from the schema. With `strict`, unknown names are an error.
pub fn exclude_outcome_variables(schema: &Schema, names: &[String], strict: bool) -> Result<Schema> {
    let mut drop = HashSet::new();
    for name in names {
        if name == schema.label_name() {
            return Err(Error::InvalidInput(format!("cannot exclude the label '{name}'")));
        }
        if schema.index_of(name).is_none() {
            if strict {
                return Err(Error::InvalidInput(format!("cannot exclude unknown feature '{name}'")));
            }
            log::warn!("excluded variable '{name}' is not in the schema");
        }
        drop.insert(name.as_str());
    }
    Ok(schema.without(&drop))
}

use serde::{Deserialize, Serialize};

use super::{check_row, sigmoid, training_labels};
use crate::data::{Cell, Dataset, Feature, FeatureKind, FeatureVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesConfig {
    /// Laplace pseudo-count for categorical tables.
    pub alpha: f64,
    pub var_floor: f64,
}

impl Default for NaiveBayesConfig {
    fn default() -> Self {
        NaiveBayesConfig {
            alpha: 1.0,
            var_floor: 1e-9,
        }
    }
}

/// Per-feature class-conditional parameters, indexed `[non-VAr, VAr]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditional {
    Gaussian { mean: [f64; 2], var: [f64; 2] },
    Categorical { probs: [Vec<f64>; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub(super) features: Vec<Feature>,
    pub priors: [f64; 2],
    pub conditionals: Vec<Conditional>,
}

impl NaiveBayesModel {
    fn log_likelihood(c: &Conditional, cell: &Cell, class: usize) -> f64 {
        match (c, cell) {
            (Conditional::Gaussian { mean, var }, Cell::Number(x)) => {
                let v = var[class];
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - mean[class]).powi(2) / v)
            }
            (Conditional::Categorical { probs }, Cell::Category(k)) => probs[class][*k].ln(),
            _ => unreachable!("row checked against features"),
        }
    }

    pub fn predict_proba(&self, v: &FeatureVector) -> Result<f64> {
        check_row(&self.features, v)?;
        let mut log_odds = self.priors[1].ln() - self.priors[0].ln();
        for (c, cell) in self.conditionals.iter().zip(&v.values) {
            log_odds += Self::log_likelihood(c, cell, 1) - Self::log_likelihood(c, cell, 0);
        }
        if log_odds.is_nan() {
            // both classes assign zero likelihood (alpha = 0 with unseen categories)
            return Ok(self.priors[1]);
        }
        Ok(sigmoid(log_odds))
    }
}

/// Gaussian class-conditionals (maximum-likelihood variance, floored) for
/// continuous features and Laplace-smoothed tables for nominal features.
pub fn fit_naive_bayes(train: &Dataset, cfg: &NaiveBayesConfig) -> Result<NaiveBayesModel> {
    if !(cfg.alpha >= 0.0) || !(cfg.var_floor > 0.0) {
        return Err(Error::InvalidInput("naive Bayes needs alpha >= 0 and var_floor > 0".into()));
    }
    let labels = training_labels(train, "naive Bayes")?;
    let mut n = [0usize; 2];
    for l in &labels {
        n[l.index()] += 1;
    }
    let total = labels.len() as f64;
    let priors = [n[0] as f64 / total, n[1] as f64 / total];
    let conditionals = train
        .schema()
        .features()
        .iter()
        .enumerate()
        .map(|(j, f)| match &f.kind {
            FeatureKind::Continuous => {
                let mut sum = [0.0; 2];
                for (cell, l) in train.column(j).zip(&labels) {
                    sum[l.index()] += cell.number().expect("complete");
                }
                let mean = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
                let mut ss = [0.0; 2];
                for (cell, l) in train.column(j).zip(&labels) {
                    let c = l.index();
                    ss[c] += (cell.number().expect("complete") - mean[c]).powi(2);
                }
                let var = [
                    (ss[0] / n[0] as f64).max(cfg.var_floor),
                    (ss[1] / n[1] as f64).max(cfg.var_floor),
                ];
                Conditional::Gaussian { mean, var }
            }
            FeatureKind::Nominal { categories } => {
                let k = categories.len();
                let mut counts = [vec![0usize; k], vec![0usize; k]];
                for (cell, l) in train.column(j).zip(&labels) {
                    counts[l.index()][cell.category().expect("complete")] += 1;
                }
                let table = |c: usize| {
                    let denom = n[c] as f64 + cfg.alpha * k as f64;
                    counts[c].iter().map(|&x| (x as f64 + cfg.alpha) / denom).collect::<Vec<f64>>()
                };
                Conditional::Categorical {
                    probs: [table(0), table(1)],
                }
            }
        })
        .collect();
    Ok(NaiveBayesModel {
        features: train.schema().features().to_vec(),
        priors,
        conditionals,
    })
}

//! Synthetic cohorts with planted class signal.
//!
//! Continuous features are class-conditional Gaussians whose VAr mean is
//! shifted by `effect` standard deviations. Nominal features draw from a
//! class-conditional categorical whose last category's log-odds is shifted by
//! `effect` for VAr rows. Every third feature (index 2, 5, 8, ...) is nominal;
//! the first `n_informative` features carry the configured effects.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Cell, Dataset, Feature, FeatureVector, Label, Schema};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub minority_rate: f64,
    pub n_features: usize,
    pub n_informative: usize,
    /// One per informative feature: standardized mean shift (continuous) or
    /// log-odds shift (nominal).
    pub effects: Vec<f64>,
    pub missing_rate: f64,
    pub seed: u64,
}

pub fn is_nominal(index: usize) -> bool {
    index % 3 == 2
}

fn n_categories(index: usize) -> usize {
    // every fourth nominal feature has three levels
    if (index / 3) % 4 == 3 {
        3
    } else {
        2
    }
}

pub fn feature_name(index: usize) -> String {
    format!("{}{:02}", if is_nominal(index) { "n" } else { "c" }, index)
}

/// Alternating-sign effects spread evenly over a range per kind: 0.55 to 1.0 sd
/// for continuous features, 0.9 to 1.5 log-odds for nominal ones.
pub fn default_effects(n_informative: usize) -> Vec<f64> {
    let cont: Vec<usize> = (0..n_informative).filter(|&i| !is_nominal(i)).collect();
    let nom: Vec<usize> = (0..n_informative).filter(|&i| is_nominal(i)).collect();
    let spread = |rank: usize, count: usize, lo: f64, hi: f64| {
        if count > 1 {
            lo + (hi - lo) * rank as f64 / (count - 1) as f64
        } else {
            hi
        }
    };
    (0..n_informative)
        .map(|i| {
            let sign = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if is_nominal(i) {
                let r = nom.iter().position(|&j| j == i).unwrap();
                sign * spread(nom.len() - 1 - r, nom.len(), 0.9, 1.5)
            } else {
                let r = cont.iter().position(|&j| j == i).unwrap();
                sign * spread(cont.len() - 1 - r, cont.len(), 0.55, 1.0)
            }
        })
        .collect()
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 711,
            minority_rate: 61.0 / 711.0,
            n_features: 93,
            n_informative: 22,
            effects: default_effects(22),
            missing_rate: 0.02,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimConfig {
            seed,
            ..Default::default()
        }
    }

    /// Multiplies every effect by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for e in &mut self.effects {
            *e *= factor;
        }
        self
    }

    /// All effects set to zero (nothing informative).
    pub fn null(mut self) -> Self {
        self.effects = vec![0.0; self.n_informative];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if self.n < 2 {
            return fail(format!("cohort size must be >= 2, got {}", self.n));
        }
        if self.n_features == 0 {
            return fail("need at least one feature".into());
        }
        if self.n_informative > self.n_features {
            return fail(format!(
                "{} informative features exceed {} features",
                self.n_informative, self.n_features
            ));
        }
        if self.effects.len() != self.n_informative {
            return fail(format!(
                "{} effects for {} informative features",
                self.effects.len(),
                self.n_informative
            ));
        }
        if self.effects.iter().any(|e| !e.is_finite()) {
            return fail("effect sizes must be finite".into());
        }
        if !(self.minority_rate > 0.0 && self.minority_rate < 0.5) {
            return fail(format!("minority_rate must lie in (0, 0.5), got {}", self.minority_rate));
        }
        if !(self.missing_rate >= 0.0 && self.missing_rate < 1.0) {
            return fail(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Continuous {
        location: f64,
        scale: f64,
    },
    /// Category probabilities for non-VAr and VAr rows.
    Nominal {
        probs: [Vec<f64>; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTruth {
    pub name: String,
    pub informative: bool,
    pub effect: f64,
    pub generator: Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    pub informative: Vec<String>,
    pub n_var: usize,
    pub n_non_var: usize,
    pub features: Vec<FeatureTruth>,
}

impl GroundTruth {
    pub fn effects(&self) -> BTreeMap<String, f64> {
        self.features.iter().map(|f| (f.name.clone(), f.effect)).collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn draw_category<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn schema(n_features: usize) -> Schema {
    let features = (0..n_features)
        .map(|i| {
            if is_nominal(i) {
                let cats: Vec<String> = (0..n_categories(i)).map(|k| format!("L{k}")).collect();
                Feature::nominal(feature_name(i), cats)
            } else {
                Feature::continuous(feature_name(i))
            }
        })
        .collect();
    Schema::new(features, "var").expect("generated names are unique")
}

/// Draws a cohort. Parameters, labels, feature values and the missingness mask
/// use separate seed streams so changing one knob leaves the others' draws intact.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let schema = schema(cfg.n_features);

    let mut prng = seeding::child_rng(cfg.seed, 0);
    let truths: Vec<FeatureTruth> = (0..cfg.n_features)
        .map(|i| {
            let effect = cfg.effects.get(i).copied().unwrap_or(0.0);
            let generator = if is_nominal(i) {
                let k = n_categories(i);
                // base prevalence of the last level between 0.15 and 0.5
                let last: f64 = prng.random_range(0.15..0.5);
                let mut base: Vec<f64> = vec![((1.0 - last) / (k - 1) as f64).ln(); k];
                base[k - 1] = last.ln();
                let mut shifted = base.clone();
                shifted[k - 1] += effect;
                Generator::Nominal {
                    probs: [softmax(&base), softmax(&shifted)],
                }
            } else {
                Generator::Continuous {
                    location: prng.random_range(20.0..80.0),
                    scale: prng.random_range(1.0..15.0),
                }
            };
            FeatureTruth {
                name: feature_name(i),
                informative: i < cfg.n_informative,
                effect,
                generator,
            }
        })
        .collect();

    let mut lrng = seeding::child_rng(cfg.seed, 1);
    let labels: Vec<Label> = (0..cfg.n)
        .map(|_| {
            if lrng.random::<f64>() < cfg.minority_rate {
                Label::Var
            } else {
                Label::NonVar
            }
        })
        .collect();

    let mut vrng = seeding::child_rng(cfg.seed, 2);
    let mut mrng = seeding::child_rng(cfg.seed, 3);
    let rows = labels
        .iter()
        .map(|&label| {
            let y = label.index();
            let values = truths
                .iter()
                .map(|t| {
                    let cell = match &t.generator {
                        Generator::Continuous { location, scale } => {
                            let z: f64 = StandardNormal.sample(&mut vrng);
                            Cell::Number(location + scale * (z + t.effect * y as f64))
                        }
                        Generator::Nominal { probs } => Cell::Category(draw_category(&mut vrng, &probs[y])),
                    };
                    if mrng.random::<f64>() < cfg.missing_rate {
                        Cell::Missing
                    } else {
                        cell
                    }
                })
                .collect();
            FeatureVector::new(values, Some(label))
        })
        .collect();

    let n_var = labels.iter().filter(|&&l| l == Label::Var).count();
    let dataset = Dataset::new(schema, rows, format!("cohort_sim(seed={})", cfg.seed))?;
    let truth = GroundTruth {
        config: cfg.clone(),
        informative: truths.iter().filter(|t| t.informative).map(|t| t.name.clone()).collect(),
        n_var,
        n_non_var: cfg.n - n_var,
        features: truths,
    };
    Ok((dataset, truth))
}

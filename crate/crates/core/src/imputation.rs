//! Nearest-neighbour imputation over mixed nominal/continuous records.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_cell, Cell, Dataset, FeatureKind, FeatureVector};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Continuous feature normalised by its observed range.
    Range(f64),
    /// Nominal feature: 0/1 mismatch.
    Mismatch,
    /// Zero-range continuous feature; contributes nothing.
    Skip,
}

/// Gower-style distance: mean over co-observed features of the range-normalised
/// absolute difference (continuous) or the mismatch indicator (nominal).
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDistance {
    weights: Vec<f64>,
    scales: Vec<Scale>,
}

impl MixedDistance {
    /// Unit weights; ranges taken from the observed values in `d`.
    pub fn fit(d: &Dataset) -> Self {
        let scales = d
            .schema()
            .features()
            .iter()
            .enumerate()
            .map(|(j, f)| match f.kind {
                FeatureKind::Nominal { .. } => Scale::Mismatch,
                FeatureKind::Continuous => {
                    let (lo, hi) = d
                        .column(j)
                        .filter_map(Cell::number)
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                    if hi > lo {
                        Scale::Range(hi - lo)
                    } else {
                        Scale::Skip
                    }
                }
            })
            .collect::<Vec<_>>();
        MixedDistance {
            weights: vec![1.0; scales.len()],
            scales,
        }
    }

    /// Explicit per-feature ranges (`None` marks a nominal feature).
    pub fn from_ranges(ranges: &[Option<f64>]) -> Result<Self> {
        let scales = ranges
            .iter()
            .map(|r| match r {
                None => Ok(Scale::Mismatch),
                Some(r) if *r > 0.0 && r.is_finite() => Ok(Scale::Range(*r)),
                Some(r) if *r == 0.0 => Ok(Scale::Skip),
                Some(r) => Err(Error::InvalidInput(format!("range {r} must be finite and >= 0"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedDistance {
            weights: vec![1.0; scales.len()],
            scales,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.scales.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} features",
                weights.len(),
                self.scales.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("distance weights must be finite and >= 0".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn n_features(&self) -> usize {
        self.scales.len()
    }

    /// Distance between two cell slices already known to share a schema.
    pub(crate) fn between(&self, a: &[Cell], b: &[Cell]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            let w = self.weights[j];
            if w == 0.0 {
                continue;
            }
            let d = match (self.scales[j], x, y) {
                (Scale::Range(r), Cell::Number(x), Cell::Number(y)) => (x - y).abs() / r,
                (Scale::Mismatch, Cell::Category(x), Cell::Category(y)) => {
                    if x == y {
                        0.0
                    } else {
                        1.0
                    }
                }
                _ => continue,
            };
            num += w * d;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            f64::INFINITY
        }
    }
}

pub fn mixed_distance(a: &FeatureVector, b: &FeatureVector, cfg: &MixedDistance) -> Result<f64> {
    let n = cfg.n_features();
    if a.values.len() != n || b.values.len() != n {
        return Err(Error::InvalidInput(format!(
            "vectors of length {} and {} against a {n}-feature distance",
            a.values.len(),
            b.values.len()
        )));
    }
    for (j, (x, y)) in a.values.iter().zip(&b.values).enumerate() {
        let kinds_ok = match (x, y) {
            (Cell::Number(_), Cell::Category(_)) | (Cell::Category(_), Cell::Number(_)) => false,
            (Cell::Number(_), _) | (_, Cell::Number(_)) => cfg.scales[j] != Scale::Mismatch,
            (Cell::Category(_), _) | (_, Cell::Category(_)) => cfg.scales[j] == Scale::Mismatch,
            _ => true,
        };
        if !kinds_ok {
            return Err(Error::InvalidInput(format!("feature {j}: cell kinds do not match the schema")));
        }
    }
    Ok(cfg.between(&a.values, &b.values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub k: usize,
    /// Per-feature distance weights; unit weights when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig { k: 5, weights: None }
    }
}

impl ImputeConfig {
    pub fn with_k(k: usize) -> Self {
        ImputeConfig { k, weights: None }
    }
}

/// One filled cell and the donor rows it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationRecord {
    pub row: usize,
    pub feature: usize,
    pub value: Cell,
    pub donors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Imputed {
    pub dataset: Dataset,
    pub audit: Vec<ImputationRecord>,
}

pub fn knn_impute(d: &Dataset, cfg: &ImputeConfig, seed: u64) -> Result<Dataset> {
    Ok(knn_impute_audited(d, cfg, seed)?.dataset)
}

pub fn knn_impute_audited(d: &Dataset, cfg: &ImputeConfig, seed: u64) -> Result<Imputed> {
    impute_from_donors(d, d, cfg, seed)
}

/// Fills every missing cell of `target` from the nearest rows of `donors`.
///
/// Used with `donors == target` for whole-dataset imputation, and with a
/// training fold as donors when imputing a held-out fold.
pub fn impute_from_donors(target: &Dataset, donors: &Dataset, cfg: &ImputeConfig, seed: u64) -> Result<Imputed> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("imputation k must be >= 1".into()));
    }
    if target.schema() != donors.schema() {
        return Err(Error::InvalidInput("target and donor datasets have different schemas".into()));
    }
    if !target.has_missing() {
        return Ok(Imputed {
            dataset: target.clone(),
            audit: Vec::new(),
        });
    }
    let schema = target.schema();
    let p = schema.n_features();
    for j in 0..p {
        let needed = target.column(j).any(Cell::is_missing);
        if needed && donors.column(j).all(Cell::is_missing) {
            return Err(Error::Degenerate(format!(
                "feature '{}' is missing in every donor row",
                schema.features()[j].name
            )));
        }
    }

    let mut distance = MixedDistance::fit(donors);
    if let Some(w) = &cfg.weights {
        distance = distance.with_weights(w.clone())?;
    }

    let filled: Vec<(FeatureVector, Vec<ImputationRecord>)> = target
        .rows()
        .par_iter()
        .enumerate()
        .map(|(i, row)| impute_row(i, row, donors, &distance, cfg.k, schema.features(), seed))
        .collect();

    let mut rows = Vec::with_capacity(filled.len());
    let mut audit = Vec::new();
    for (row, rec) in filled {
        rows.push(row);
        audit.extend(rec);
    }
    Ok(Imputed {
        dataset: target.with_rows(rows, target.provenance().to_string())?,
        audit,
    })
}

fn impute_row(
    i: usize,
    row: &FeatureVector,
    donors: &Dataset,
    distance: &MixedDistance,
    k: usize,
    features: &[crate::data::Feature],
    seed: u64,
) -> (FeatureVector, Vec<ImputationRecord>) {
    if row.is_complete() {
        return (row.clone(), Vec::new());
    }
    let dists: Vec<f64> = donors.rows().iter().map(|d| distance.between(&row.values, &d.values)).collect();
    let mut out = row.clone();
    let mut audit = Vec::new();
    for (j, cell) in row.values.iter().enumerate() {
        if !cell.is_missing() {
            continue;
        }
        let mut pool: Vec<usize> = (0..donors.n_rows())
            .filter(|&r| !donors.rows()[r].values[j].is_missing())
            .collect();
        pool.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
        let mut take = k.min(pool.len());
        let cutoff = dists[pool[take - 1]];
        while take < pool.len() && dists[pool[take]] == cutoff {
            take += 1;
        }
        let mut chosen = pool[..take].to_vec();
        let value = match &features[j].kind {
            FeatureKind::Continuous => {
                let sum: f64 = chosen.iter().filter_map(|&r| donors.rows()[r].values[j].number()).sum();
                Cell::Number(sum / chosen.len() as f64)
            }
            FeatureKind::Nominal { categories } => {
                chosen.shuffle(&mut seeding::child_rng(seed, (i as u64) << 20 | j as u64));
                let mut votes = vec![0usize; categories.len()];
                for &r in &chosen {
                    if let Some(c) = donors.rows()[r].values[j].category() {
                        votes[c] += 1;
                    }
                }
                let best = votes.iter().copied().max().unwrap_or(0);
                Cell::Category(votes.iter().position(|&v| v == best).unwrap_or(0))
            }
        };
        chosen.sort_unstable();
        out.values[j] = value;
        audit.push(ImputationRecord {
            row: i,
            feature: j,
            value,
            donors: chosen,
        });
    }
    (out, audit)
}

/// Audit CSV: `row,feature,value,donors` with donors separated by `;`.
pub fn write_audit_csv<W: Write>(d: &Dataset, audit: &[ImputationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::InvalidInput(format!("audit write failed: {e}"));
    w.write_record(["row", "feature", "value", "donors"]).map_err(err)?;
    for r in audit {
        let f = &d.schema().features()[r.feature];
        let donors = r.donors.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([r.row.to_string(), f.name.clone(), format_cell(&r.value, &f.kind), donors])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("audit flush failed: {e}")))?;
    Ok(())
}

//! Training-set rebalancing: random undersampling of the majority class
//! followed by SMOTE oversampling of the minority class.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_counts, Cell, ClassCounts, Dataset, FeatureKind, FeatureVector, Label};
use crate::error::{Error, Result};
use crate::imputation::MixedDistance;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingConfig {
    /// Majority:minority ratio after undersampling.
    pub under_ratio: f64,
    pub smote_multiplier: f64,
    pub smote_k: usize,
    /// Override `under_ratio` with `smote_multiplier` so the classes end up equal.
    pub balance_exact: bool,
    pub seed: u64,
}

impl ResamplingConfig {
    pub fn new(seed: u64) -> Self {
        ResamplingConfig {
            under_ratio: 3.0,
            smote_multiplier: 2.0,
            smote_k: 5,
            balance_exact: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.under_ratio >= 1.0) || !self.under_ratio.is_finite() {
            return Err(Error::InvalidInput(format!("under_ratio must be >= 1, got {}", self.under_ratio)));
        }
        if !(self.smote_multiplier >= 1.0) || !self.smote_multiplier.is_finite() {
            return Err(Error::InvalidInput(format!(
                "smote_multiplier must be >= 1, got {}",
                self.smote_multiplier
            )));
        }
        if self.smote_k == 0 {
            return Err(Error::InvalidInput("smote_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_under_ratio(&self) -> f64 {
        if self.balance_exact {
            self.smote_multiplier
        } else {
            self.under_ratio
        }
    }
}

/// Number of majority rows kept at `ratio`.
pub fn undersample_target(n_minority: usize, n_majority: usize, ratio: f64) -> usize {
    ((ratio * n_minority as f64).floor() as usize).min(n_majority)
}

/// Number of synthetic rows SMOTE emits for `n` minority rows.
pub fn smote_count(n: usize, multiplier: f64) -> usize {
    ((multiplier - 1.0) * n as f64).floor() as usize
}

fn undersample_indices(labels: &[Label], ratio: f64, seed: u64) -> Result<(Vec<usize>, ClassCounts)> {
    if !(ratio >= 1.0) {
        return Err(Error::InvalidInput(format!("undersampling ratio must be >= 1, got {ratio}")));
    }
    let counts = class_counts(labels)?;
    if counts.n_minority == 0 {
        return Err(Error::Degenerate("cannot undersample: no minority rows".into()));
    }
    let majority: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == counts.majority_label())
        .collect();
    let keep = undersample_target(counts.n_minority, counts.n_majority, ratio);
    let mut rng = seeding::rng(seed);
    let mut kept: Vec<usize> = index::sample(&mut rng, majority.len(), keep)
        .into_iter()
        .map(|i| majority[i])
        .collect();
    kept.extend((0..labels.len()).filter(|&i| labels[i] == counts.minority_label));
    kept.sort_unstable();
    Ok((kept, counts))
}

/// Keeps every minority row and a uniform random `floor(ratio * n_minority)`
/// majority rows (or all of them if there are fewer). Row order is preserved.
pub fn undersample_majority(d: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    let (kept, _) = undersample_indices(&d.labels()?, ratio, seed)?;
    Ok(d.subset(&kept))
}

/// Where a synthetic row came from, as indices into the minority input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub seed: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Smote {
    /// Synthetic rows only.
    pub dataset: Dataset,
    pub origins: Vec<SyntheticOrigin>,
}

/// k nearest other rows of each row, ties broken by index.
fn neighbours(d: &Dataset, k: usize) -> Vec<Vec<usize>> {
    let metric = MixedDistance::fit(d);
    let rows = d.rows();
    (0..rows.len())
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (metric.between(&rows[i].values, &rows[j].values), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

fn vote(nb: &[usize], rows: &[FeatureVector], j: usize, seed_cat: usize, n_cat: usize) -> usize {
    let mut tally = vec![0usize; n_cat];
    for &r in nb {
        if let Cell::Category(c) = rows[r].values[j] {
            tally[c] += 1;
        }
    }
    let best = tally.iter().copied().max().unwrap_or(0);
    if tally[seed_cat] == best {
        seed_cat
    } else {
        tally.iter().position(|&t| t == best).unwrap_or(seed_cat)
    }
}

/// SMOTE over a single-class, complete dataset.
///
/// Emits `floor((multiplier - 1) * n)` rows. Seed rows are taken from
/// successive shuffled passes over the input, so each row seeds at most
/// `ceil(multiplier - 1)` synthetics. Continuous cells interpolate towards one
/// of the k nearest neighbours with a single λ per row; nominal cells take the
/// neighbours' majority category, preferring the seed's category on ties.
pub fn smote_with_origins(minority: &Dataset, multiplier: f64, k: usize, seed: u64) -> Result<Smote> {
    if !(multiplier >= 1.0) || !multiplier.is_finite() {
        return Err(Error::InvalidInput(format!("SMOTE multiplier must be >= 1, got {multiplier}")));
    }
    if k == 0 {
        return Err(Error::InvalidInput("SMOTE k must be >= 1".into()));
    }
    let n = minority.n_rows();
    let n_syn = smote_count(n, multiplier);
    if n_syn == 0 {
        return Ok(Smote {
            dataset: minority.with_rows(Vec::new(), format!("{} (smote)", minority.provenance()))?,
            origins: Vec::new(),
        });
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("SMOTE needs at least 2 minority rows, got {n}")));
    }
    if minority.has_missing() {
        return Err(Error::InvalidInput("SMOTE requires complete rows; impute first".into()));
    }
    let labels = minority.labels()?;
    let label = labels[0];
    if labels.iter().any(|&l| l != label) {
        return Err(Error::InvalidInput("SMOTE input must contain a single class".into()));
    }
    let k = if k >= n {
        log::warn!("SMOTE k = {k} >= {n} minority rows; using k = {}", n - 1);
        n - 1
    } else {
        k
    };

    let nn = neighbours(minority, k);
    let rows = minority.rows();
    let features = minority.schema().features();
    let mut rng = seeding::rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n_syn);
    let mut origins = Vec::with_capacity(n_syn);
    for s in 0..n_syn {
        if s % n == 0 {
            order.shuffle(&mut rng);
        }
        let i = order[s % n];
        let j = nn[i][rng.random_range(0..nn[i].len())];
        let lambda: f64 = rng.random();
        let values = features
            .iter()
            .enumerate()
            .map(|(f, feat)| match (&feat.kind, rows[i].values[f], rows[j].values[f]) {
                (FeatureKind::Continuous, Cell::Number(a), Cell::Number(b)) => {
                    Cell::Number((a + lambda * (b - a)).clamp(a.min(b), a.max(b)))
                }
                (FeatureKind::Nominal { categories }, Cell::Category(c), _) => {
                    Cell::Category(vote(&nn[i], rows, f, c, categories.len()))
                }
                _ => unreachable!("rows validated complete and schema-conformant"),
            })
            .collect();
        out.push(FeatureVector::new(values, Some(label)));
        origins.push(SyntheticOrigin {
            seed: i,
            neighbor: j,
            lambda,
        });
    }
    Ok(Smote {
        dataset: minority.with_rows(out, format!("{} (smote)", minority.provenance()))?,
        origins,
    })
}

/// Synthetic rows only; see [`smote_with_origins`].
pub fn smote_oversample(minority: &Dataset, multiplier: f64, k: usize, seed: u64) -> Result<Dataset> {
    smote_with_origins(minority, multiplier, k, seed).map(|s| s.dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrigin {
    /// Row index in the rebalanced input.
    Original(usize),
    Synthetic { seed: usize, neighbor: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub minority: usize,
    pub majority: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceAudit {
    pub config: ResamplingConfig,
    pub effective_under_ratio: f64,
    pub minority_label: Label,
    pub before: StageCounts,
    pub after_undersampling: StageCounts,
    pub after_smote: StageCounts,
    pub n_synthetic: usize,
}

#[derive(Debug, Clone)]
pub struct Rebalanced {
    pub dataset: Dataset,
    /// Parallel to `dataset.rows()`.
    pub origins: Vec<RowOrigin>,
    pub audit: RebalanceAudit,
}

/// Undersamples, then SMOTEs, then shuffles, all under `cfg.seed`.
pub fn rebalance(train: &Dataset, cfg: &ResamplingConfig) -> Result<Rebalanced> {
    cfg.validate()?;
    let labels = train.labels()?;
    let ratio = cfg.effective_under_ratio();
    let (kept, before) = undersample_indices(&labels, ratio, seeding::derive(cfg.seed, 1))?;
    let minority_label = before.minority_label;
    let minority_idx: Vec<usize> = kept.iter().copied().filter(|&i| labels[i] == minority_label).collect();
    let smote = smote_with_origins(
        &train.subset(&minority_idx),
        cfg.smote_multiplier,
        cfg.smote_k,
        seeding::derive(cfg.seed, 2),
    )?;

    let n_kept_majority = kept.len() - minority_idx.len();
    let mut rows: Vec<(FeatureVector, RowOrigin)> = kept
        .iter()
        .map(|&i| (train.rows()[i].clone(), RowOrigin::Original(i)))
        .chain(smote.dataset.rows().iter().cloned().zip(smote.origins.iter().map(|o| {
            RowOrigin::Synthetic {
                seed: minority_idx[o.seed],
                neighbor: minority_idx[o.neighbor],
            }
        })))
        .collect();
    rows.shuffle(&mut seeding::rng(seeding::derive(cfg.seed, 3)));
    let (rows, origins): (Vec<_>, Vec<_>) = rows.into_iter().unzip();

    let n_synthetic = smote.origins.len();
    let audit = RebalanceAudit {
        config: cfg.clone(),
        effective_under_ratio: ratio,
        minority_label,
        before: StageCounts {
            minority: before.n_minority,
            majority: before.n_majority,
        },
        after_undersampling: StageCounts {
            minority: minority_idx.len(),
            majority: n_kept_majority,
        },
        after_smote: StageCounts {
            minority: minority_idx.len() + n_synthetic,
            majority: n_kept_majority,
        },
        n_synthetic,
    };
    log::debug!("rebalanced {:?} -> {:?}", audit.before, audit.after_smote);
    Ok(Rebalanced {
        dataset: train.with_rows(rows, format!("{} (rebalanced)", train.provenance()))?,
        origins,
        audit,
    })
}

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoGainResult {
    /// Bits.
    pub gain: f64,
    pub class_entropy: f64,
}

/// Shannon entropy in bits of a histogram, with `0 log 0 = 0`.
pub fn entropy(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("entropy of an empty histogram".into()));
    }
    let n = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Information gain of a nominal feature about a binary label.
///
/// Rows where the feature is missing (`None`) are dropped before anything is
/// computed, so `class_entropy` refers to the retained rows.
pub fn info_gain(feature: &[Option<usize>], labels: &[Label]) -> Result<InfoGainResult> {
    if feature.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature values for {} labels",
            feature.len(),
            labels.len()
        )));
    }
    let pairs: Vec<(usize, Label)> = feature
        .iter()
        .zip(labels)
        .filter_map(|(f, &l)| f.map(|v| (v, l)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("information gain on an empty column".into()));
    }
    let n_levels = pairs.iter().map(|(v, _)| v + 1).max().unwrap_or(0);
    let mut table = vec![[0usize; 2]; n_levels];
    let mut class = [0usize; 2];
    for (v, l) in &pairs {
        table[*v][l.index()] += 1;
        class[l.index()] += 1;
    }
    let class_entropy = entropy(&class)?;
    let n = pairs.len() as f64;
    let mut conditional = 0.0;
    for row in table.iter().filter(|r| r[0] + r[1] > 0) {
        let nv = (row[0] + row[1]) as f64;
        conditional += nv / n * entropy(row)?;
    }
    Ok(InfoGainResult {
        gain: (class_entropy - conditional).clamp(0.0, class_entropy),
        class_entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[50, 50]).unwrap(), 1.0);
        assert_eq!(entropy(&[100, 0]).unwrap(), 0.0);
        assert!(entropy(&[0, 0]).is_err());
    }

    #[test]
    fn perfect_predictor_recovers_label_entropy() {
        let labels: Vec<Label> = (0..30).map(|i| Label::from_index(usize::from(i % 3 == 0))).collect();
        let feat: Vec<Option<usize>> = labels.iter().map(|l| Some(l.index())).collect();
        let r = info_gain(&feat, &labels).unwrap();
        assert!((r.gain - r.class_entropy).abs() < 1e-15);
    }

    #[test]
    fn independent_feature_has_zero_gain() {
        // counts proportional to marginals: 2x2 with rows (10,30), (5,15)
        let mut feat = Vec::new();
        let mut labels = Vec::new();
        for (v, l, n) in [(0, 0, 10), (0, 1, 30), (1, 0, 5), (1, 1, 15)] {
            for _ in 0..n {
                feat.push(Some(v));
                labels.push(Label::from_index(l));
            }
        }
        assert!(info_gain(&feat, &labels).unwrap().gain.abs() < 1e-15);
    }

    #[test]
    fn missing_values_are_dropped() {
        let feat = [Some(0), None, Some(1), None];
        let labels = [Label::NonVar, Label::NonVar, Label::Var, Label::Var];
        let r = info_gain(&feat, &labels).unwrap();
        assert_eq!(r.class_entropy, 1.0);
        assert_eq!(r.gain, 1.0);
        assert!(info_gain(&[None, None], &labels[..2]).is_err());
    }

    #[test]
    fn constant_feature_has_zero_gain() {
        let labels = [Label::NonVar, Label::Var, Label::Var];
        assert_eq!(info_gain(&[Some(1); 3], &labels).unwrap().gain, 0.0);
    }
}

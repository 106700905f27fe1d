use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifiers::label_at;
use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    /// Tallies predictions at `threshold` (VAr iff score >= threshold).
    pub fn from_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (label_at(s, threshold), l) {
                (Label::Var, Label::Var) => cm.tp += 1,
                (Label::Var, Label::NonVar) => cm.fp += 1,
                (Label::NonVar, Label::NonVar) => cm.tn += 1,
                (Label::NonVar, Label::Var) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    /// TP / (TP + FN).
    pub sensitivity: f64,
    /// TN / (TN + FP).
    pub specificity: f64,
    /// Miss rate, FN / (FN + TP), stored as `1 - sensitivity` so the identity is exact.
    pub fnr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

pub fn confusion_metrics(cm: &ConfusionMatrix) -> Result<MetricSet> {
    if cm.tp + cm.fn_ == 0 {
        return Err(Error::Degenerate("no VAr (positive) records in the test population".into()));
    }
    if cm.tn + cm.fp == 0 {
        return Err(Error::Degenerate("no non-VAr (negative) records in the test population".into()));
    }
    let sensitivity = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    Ok(MetricSet {
        sensitivity,
        specificity: cm.tn as f64 / (cm.tn + cm.fp) as f64,
        fnr: 1.0 - sensitivity,
        auc: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point after the origin.
    pub thresholds: Vec<f64>,
    pub auc: f64,
    /// Exact Mann–Whitney tally: `(2 * wins + ties) / (2 * positives * negatives)`.
    pub wins: u64,
    pub ties: u64,
    pub positives: u64,
    pub negatives: u64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fpr,tpr")?;
        for (f, t) in &self.points {
            writeln!(w, "{},{}", fmt12(*f), fmt12(*t))?;
        }
        Ok(())
    }
}

/// Shortest decimal that round-trips after rounding to 12 significant digits.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("valid float");
    format!("{rounded}")
}

/// ROC curve from all distinct score thresholds, with the AUC computed as the
/// Mann–Whitney statistic (ties count one half).
pub fn roc_auc(scores: &[(f64, Label)]) -> Result<RocCurve> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score in ROC input".into()));
    }
    let positives = scores.iter().filter(|(_, l)| *l == Label::Var).count() as u64;
    let negatives = scores.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Degenerate(format!(
            "ROC needs both classes ({positives} VAr, {negatives} non-VAr)"
        )));
    }
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut wins, mut ties) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        let (mut p, mut q) = (0u64, 0u64);
        while i < sorted.len() && sorted[i].0 == s {
            match sorted[i].1 {
                Label::Var => p += 1,
                Label::NonVar => q += 1,
            }
            i += 1;
        }
        // negatives strictly below this score
        wins += p * (negatives - fp - q);
        ties += p * q;
        tp += p;
        fp += q;
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        thresholds.push(s);
    }
    let auc = (2 * wins + ties) as f64 / (2 * positives * negatives) as f64;
    Ok(RocCurve {
        points,
        thresholds,
        auc,
        wins,
        ties,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let m = confusion_metrics(&ConfusionMatrix::new(73, 24, 76, 27)).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fnr), (0.73, 0.76, 0.27));
        let m = confusion_metrics(&ConfusionMatrix::new(61, 0, 650, 0)).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.fnr), (1.0, 1.0, 0.0));
        let m = confusion_metrics(&ConfusionMatrix::new(1, 0, 1, 3)).unwrap();
        assert_eq!((m.sensitivity, m.fnr), (0.25, 0.75));
    }

    #[test]
    fn empty_class_is_named() {
        let e = confusion_metrics(&ConfusionMatrix::new(0, 3, 2, 0)).unwrap_err();
        assert!(e.to_string().contains("VAr (positive)"), "{e}");
        let e = confusion_metrics(&ConfusionMatrix::new(3, 0, 0, 1)).unwrap_err();
        assert!(e.to_string().contains("non-VAr"), "{e}");
    }

    #[test]
    fn from_scores_uses_ge() {
        let cm = ConfusionMatrix::from_scores(
            &[0.5, 0.49, 0.9, 0.1],
            &[Label::Var, Label::Var, Label::NonVar, Label::NonVar],
            0.5,
        )
        .unwrap();
        assert_eq!(cm, ConfusionMatrix::new(1, 1, 1, 1));
    }

    #[test]
    fn auc_examples() {
        let v = Label::Var;
        let n = Label::NonVar;
        let r = roc_auc(&[(0.9, v), (0.4, v), (0.5, n), (0.1, n)]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        let r = roc_auc(&[(0.3, v), (0.3, n), (0.3, v)]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let r = roc_auc(&[(2.0, v), (1.0, n), (3.0, v)]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert!(roc_auc(&[(0.2, v), (0.4, v)]).is_err());
        assert!(roc_auc(&[(f64::NAN, v), (0.4, n)]).is_err());
    }

    #[test]
    fn twelve_digit_format() {
        assert_eq!(fmt12(0.1 + 0.2), "0.3");
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(0.0), "0");
        assert_eq!(fmt12(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt12(1.234_567_890_123_4e-7), "0.000000123456789012");
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability at or above which a window is predicted to cross.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    /// `None` when the sample holds a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Metrics {
    pub fn auc(&self) -> Result<f64> {
        self.auc.ok_or(Error::UndefinedAuc)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts at [`THRESHOLD`], precision, recall, `F1 = 2·P·R / (P + R)` and ROC AUC.
/// Precision, recall and F1 are 0 when their denominators vanish.
pub fn metrics(scores: &[(f64, u8)]) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::Evaluation("no scores to evaluate".into()));
    }
    if let Some((p, _)) = scores.iter().find(|(p, _)| !p.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {p}")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(p, y) in scores {
        match (p >= THRESHOLD, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        acc: ratio(tp + tn, tp + fp + tn + fn_),
        auc: roc_auc(scores).ok(),
        f1,
        precision,
        recall,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Trapezoidal area under the ROC curve over every distinct score threshold.
///
/// Accumulated in integers as `Σ Δfp·(tp_prev + tp_cur)` and divided once by `2·P·N`,
/// so tied scores contribute half a pair and the result is exact.
pub fn roc_auc(scores: &[(f64, u8)]) -> Result<f64> {
    let positives = scores.iter().filter(|s| s.1 == 1).count() as u64;
    let negatives = scores.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut sorted: Vec<(f64, u8)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut area) = (0u64, 0u128);
    let mut i = 0;
    while i < sorted.len() {
        let (mut dp, mut dn) = (0u64, 0u64);
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 == 1 {
                dp += 1;
            } else {
                dn += 1;
            }
            i += 1;
        }
        area += dn as u128 * (2 * tp + dp) as u128;
        tp += dp;
    }
    Ok(area as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counts() {
        let scores = [(0.9, 1), (0.8, 1), (0.7, 0), (0.2, 0), (0.1, 0)];
        let m = metrics(&scores).unwrap();
        assert_eq!((m.tp, m.tn, m.fp, m.fn_), (2, 2, 1, 0));
        assert!((m.acc - 0.8).abs() < 1e-12);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_separation() {
        let m = metrics(&[(0.9, 1), (0.6, 1), (0.4, 0), (0.1, 0)]).unwrap();
        assert_eq!((m.acc, m.auc, m.f1), (1.0, Some(1.0), 1.0));
    }

    #[test]
    fn pairwise_example() {
        let auc = roc_auc(&[(0.9, 1), (0.4, 1), (0.5, 0), (0.1, 0)]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(roc_auc(&[(0.5, 1), (0.5, 0)]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_auc_undefined() {
        let m = metrics(&[(0.9, 1), (0.2, 1)]).unwrap();
        assert!(matches!(m.auc(), Err(Error::UndefinedAuc)));
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.precision, 1.0);
    }

    #[test]
    fn no_positive_predictions_give_zero_f1() {
        let m = metrics(&[(0.1, 1), (0.2, 0)]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(metrics(&[]).is_err());
    }

    #[test]
    fn json_keys() {
        let m = metrics(&[(0.9, 1), (0.2, 0)]).unwrap();
        let v: serde_json::Value = serde_json::to_value(m).unwrap();
        for key in [
            "acc",
            "auc",
            "f1",
            "precision",
            "recall",
            "tp",
            "fp",
            "tn",
            "fn",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}

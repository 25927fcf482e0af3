//! Confusion-based classification metrics for imbalanced binary tasks.
//!
//! All report values follow the percent convention (0..100, two decimals in
//! rendered tables). The `auc` field is balanced accuracy over hard labels,
//! i.e. (R_0 + R_1) / 2, which is the ROC-AUC of a single-threshold
//! classifier. A score-based ROC-AUC is available separately via
//! [`roc_auc_from_scores`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts for the positive class (label 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Gold-positive count.
    pub fn support_pos(&self) -> usize {
        self.tp + self.fn_
    }

    /// Gold-negative count.
    pub fn support_neg(&self) -> usize {
        self.tn + self.fp
    }
}

/// Count confusion cells from aligned hard predictions and gold labels.
pub fn confusion(preds: &[u8], gold: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predictions vs {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    for (i, (&p, &g)) in preds.iter().zip(gold.iter()).enumerate() {
        if p > 1 || g > 1 {
            return Err(Error::value(
                format!("pair {i}"),
                format!("labels must be 0 or 1, got pred={p} gold={g}"),
            ));
        }
        match (p, g) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => unreachable!(),
        }
    }
    Ok(cm)
}

/// The full per-class and macro metric set of one evaluation, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p0: f64,
    pub r0: f64,
    pub f1_0: f64,
    pub p1: f64,
    pub r1: f64,
    pub f1_1: f64,
    pub p_macro: f64,
    pub r_macro: f64,
    pub f1_macro: f64,
    /// Balanced accuracy (R_0 + R_1) / 2 over hard labels.
    pub auc: f64,
    /// Names of metrics whose denominator was zero (value reported as 0).
    pub zero_division: Vec<String>,
}

/// Column order used by every tabular writer.
pub const METRIC_FIELDS: [&str; 10] = [
    "P_0", "R_0", "F1_0", "P_1", "R_1", "F1_1", "P_m", "R_m", "F1_m", "AUC",
];

impl MetricsReport {
    /// Metric values in [`METRIC_FIELDS`] order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.p0,
            self.r0,
            self.f1_0,
            self.p1,
            self.r1,
            self.f1_1,
            self.p_macro,
            self.r_macro,
            self.f1_macro,
            self.auc,
        ]
    }

    /// Rebuild a report from values in [`METRIC_FIELDS`] order.
    pub fn from_values(v: [f64; 10]) -> Self {
        Self {
            p0: v[0],
            r0: v[1],
            f1_0: v[2],
            p1: v[3],
            r1: v[4],
            f1_1: v[5],
            p_macro: v[6],
            r_macro: v[7],
            f1_macro: v[8],
            auc: v[9],
            zero_division: Vec::new(),
        }
    }
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Compute the full metric report from confusion counts.
///
/// Zero-denominator precision/recall values are reported as 0 and the metric
/// name is recorded in `zero_division`.
pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let mut flags = Vec::new();
    // For class 0 the "positives" are the gold negatives.
    let p0 = ratio(cm.tn, cm.tn + cm.fn_, "P_0", &mut flags);
    let r0 = ratio(cm.tn, cm.tn + cm.fp, "R_0", &mut flags);
    let p1 = ratio(cm.tp, cm.tp + cm.fp, "P_1", &mut flags);
    let r1 = ratio(cm.tp, cm.tp + cm.fn_, "R_1", &mut flags);
    let f1_0 = f1(p0, r0);
    let f1_1 = f1(p1, r1);
    MetricsReport {
        p0,
        r0,
        f1_0,
        p1,
        r1,
        f1_1,
        p_macro: (p0 + p1) / 2.0,
        r_macro: (r0 + r1) / 2.0,
        f1_macro: (f1_0 + f1_1) / 2.0,
        auc: (r0 + r1) / 2.0,
        zero_division: flags,
    }
}

/// Balanced accuracy of hard predictions, in percent.
///
/// Errors when either class has no gold members, because a recall (and thus
/// the balanced accuracy) is undefined there.
pub fn auc_hard(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.support_pos() == 0 {
        return Err(Error::UndefinedMetric(
            "auc_hard needs at least one gold-positive document".into(),
        ));
    }
    if cm.support_neg() == 0 {
        return Err(Error::UndefinedMetric(
            "auc_hard needs at least one gold-negative document".into(),
        ));
    }
    let r1 = 100.0 * cm.tp as f64 / cm.support_pos() as f64;
    let r0 = 100.0 * cm.tn as f64 / cm.support_neg() as f64;
    Ok((r0 + r1) / 2.0)
}

/// Score-based ROC-AUC (Mann-Whitney form), in percent.
///
/// This is the optional probabilistic counterpart to the hard-label `auc`
/// column; ties contribute 1/2.
pub fn roc_auc_from_scores(scores: &[f64], gold: &[u8]) -> Result<f64> {
    if scores.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} scores vs {} gold labels",
            scores.len(),
            gold.len()
        )));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, &g)| g == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, &g)| g == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(
            "roc_auc needs at least one document of each gold class".into(),
        ));
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(100.0 * wins / (pos.len() as f64 * neg.len() as f64))
}

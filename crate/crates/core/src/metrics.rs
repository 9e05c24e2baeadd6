//! Classification scores: confusion matrix, precision/recall/F1, step-wise
//! average precision.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, NUM_CLASSES};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.0[c][c]).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.0[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&r| r != c).map(|r| self.0[r][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&p| p != c).map(|p| self.0[c][p]).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.0[c].iter().sum()
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t as usize >= NUM_CLASSES || p as usize >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!("class label out of range: {t} / {p}")));
        }
        cm.0[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub average_precision: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: [ClassScores; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_average_precision: Option<f64>,
    pub confusion: ConfusionMatrix,
}

pub fn scores(cm: &ConfusionMatrix) -> MetricsReport {
    let per_class: [ClassScores; NUM_CLASSES] = std::array::from_fn(|c| {
        let tp = cm.true_positives(c);
        let precision = ratio(tp, tp + cm.false_positives(c));
        let recall = ratio(tp, tp + cm.false_negatives(c));
        ClassScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
            average_precision: None,
            support: cm.support(c),
        }
    });
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64;
    MetricsReport {
        accuracy: ratio(cm.trace(), cm.total()),
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
        macro_average_precision: None,
        confusion: *cm,
    }
}

/// Step-wise average precision: thresholds at each distinct score in
/// descending order, tied scores entering together. No positives gives 0.
pub fn average_precision(positive: &[bool], scores: &[f64]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets vs {} scores",
            positive.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += positive[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

pub fn macro_f1(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    Ok(scores(&confusion(y_true, y_pred)?).macro_f1)
}

pub fn macro_precision(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    Ok(scores(&confusion(y_true, y_pred)?).macro_precision)
}

/// Full report from labels and an `N × 4` probability matrix (argmax
/// predictions, per-class AP on the class probabilities).
pub fn evaluate(y_true: &[u8], probs: &[f64]) -> Result<MetricsReport> {
    if probs.len() != y_true.len() * NUM_CLASSES {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            y_true.len()
        )));
    }
    let pred: Vec<u8> = probs.chunks(NUM_CLASSES).map(|r| argmax(r) as u8).collect();
    let mut report = scores(&confusion(y_true, &pred)?);
    let mut sum = 0.0;
    for c in 0..NUM_CLASSES {
        let pos: Vec<bool> = y_true.iter().map(|&t| t as usize == c).collect();
        let sc: Vec<f64> = probs.chunks(NUM_CLASSES).map(|r| r[c]).collect();
        let ap = average_precision(&pos, &sc)?;
        report.per_class[c].average_precision = Some(ap);
        sum += ap;
    }
    report.macro_average_precision = Some(sum / NUM_CLASSES as f64);
    Ok(report)
}

impl MetricsReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        grid::write_json(path.as_ref(), self)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        grid::read_json(path.as_ref())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "class", "precision", "recall", "f1", "AP", "support"
        )?;
        for (c, s) in self.per_class.iter().enumerate() {
            writeln!(
                f,
                "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}{:>10}",
                c,
                s.precision,
                s.recall,
                s.f1,
                opt(s.average_precision),
                s.support
            )?;
        }
        writeln!(
            f,
            "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}{:>10}",
            "macro",
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
            opt(self.macro_average_precision),
            self.confusion.total()
        )?;
        write!(f, "accuracy  {:.4}", self.accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(cm.0[r][c], (r == c) as u64);
            }
        }
        let cm = confusion(&[0, 1], &[1, 0]).unwrap();
        assert_eq!(cm.0[0][1], 1);
        assert_eq!(cm.0[1][0], 1);
        assert_eq!(cm.trace(), 0);
        assert!(confusion(&[0], &[4]).is_err());
        assert!(confusion(&[0], &[]).is_err());
    }

    #[test]
    fn hand_case_scores() {
        // Class 1: TP = 3, FP = 1, FN = 2.
        let t = [1, 1, 1, 1, 1, 0];
        let p = [1, 1, 1, 0, 2, 1];
        let r = scores(&confusion(&t, &p).unwrap());
        assert_eq!(r.per_class[1].precision, 0.75);
        assert_eq!(r.per_class[1].recall, 0.6);
        assert!((r.per_class[1].f1 - 2.0 / (1.0 / 0.75 + 1.0 / 0.6)).abs() < 1e-15);
        // Class 3 is absent from both: zeros, still in the macro mean.
        assert_eq!(r.per_class[3], ClassScores::default());
        let expect = r.per_class.iter().map(|s| s.f1).sum::<f64>() / 4.0;
        assert_eq!(r.macro_f1, expect);
    }

    #[test]
    fn all_correct() {
        let y = [0, 1, 2, 3, 3];
        let r = evaluate(&y, &y.iter().flat_map(|&c| {
            let mut row = [0.0; 4];
            row[c as usize] = 1.0;
            row
        }).collect::<Vec<_>>())
        .unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_average_precision, Some(1.0));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, false], &[0.9, 0.8, 0.1]).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, true, false], &[0.9, 0.5, 0.1]).unwrap(), 0.5);
        assert_eq!(average_precision(&[false, false], &[0.9, 0.5]).unwrap(), 0.0);
        // Ties enter together: one threshold with P = 1/2.
        assert_eq!(average_precision(&[true, false], &[0.5, 0.5]).unwrap(), 0.5);
        let s = [0.3, 0.9, 0.1, 0.7];
        let pos = [true, false, true, true];
        let a = average_precision(&pos, &s).unwrap();
        let b = average_precision(&pos, &s.map(|v: f64| v.exp() * 3.0 - 1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn text_table_layout() {
        let r = scores(&confusion(&[0, 1], &[0, 1]).unwrap());
        let s = r.to_string();
        assert_eq!(s.lines().count(), 7);
        assert!(s.lines().next().unwrap().contains("precision"));
    }
}

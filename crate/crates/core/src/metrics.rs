//! Per-class and macro precision/recall/F1, accuracy, the binary
//! high/low score mapping, and relative-improvement reporting.

use crate::error::{Error, Result};
use std::fmt::{Debug, Display};

/// Label types the evaluation harness accepts.
pub trait Label: Copy + Eq + Ord + Display + Debug {}
impl<L: Copy + Eq + Ord + Display + Debug> Label for L {}

/// Confusion counts over a fixed, declared class set. Rows are truth,
/// columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix<L> {
    classes: Vec<L>,
    counts: Vec<u64>,
}

impl<L: Label> ConfusionMatrix<L> {
    pub fn new(classes: &[L]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("class set must not be empty".into()));
        }
        let mut sorted = classes.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::Config("class set contains duplicates".into()));
        }
        Ok(ConfusionMatrix { classes: classes.to_vec(), counts: vec![0; classes.len() * classes.len()] })
    }

    pub fn from_pairs(classes: &[L], truth: &[L], predicted: &[L]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Data("cannot evaluate zero samples".into()));
        }
        let mut m = ConfusionMatrix::new(classes)?;
        for (t, p) in truth.iter().zip(predicted) {
            m.add(*t, *p)?;
        }
        Ok(m)
    }

    fn index_of(&self, label: L) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| Error::Data(format!("label {label} is outside the declared class set")))
    }

    pub fn add(&mut self, truth: L, predicted: L) -> Result<()> {
        let t = self.index_of(truth)?;
        let p = self.index_of(predicted)?;
        self.counts[t * self.classes.len() + p] += 1;
        Ok(())
    }

    pub fn classes(&self) -> &[L] {
        &self.classes
    }

    pub fn count(&self, truth: L, predicted: L) -> Result<u64> {
        Ok(self.counts[self.index_of(truth)? * self.classes.len() + self.index_of(predicted)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
}

/// Evaluation report: per-class rows plus unweighted macro averages over the
/// whole declared class set, including classes that never occur.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport<L> {
    pub classes: Vec<L>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub sample_count: u64,
}

/// Evaluates predictions against truth over a declared class set.
///
/// Zero-denominator convention: precision and recall are 0 when their
/// denominator is 0, and F1 is 0 when precision + recall is 0.
pub fn evaluate<L: Label>(truth: &[L], predicted: &[L], classes: &[L]) -> Result<MetricsReport<L>> {
    evaluate_matrix(&ConfusionMatrix::from_pairs(classes, truth, predicted)?)
}

pub fn evaluate_matrix<L: Label>(matrix: &ConfusionMatrix<L>) -> Result<MetricsReport<L>> {
    let n = matrix.classes.len();
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Data("cannot evaluate an empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(n);
    let mut trace = 0u64;
    for c in 0..n {
        let tp = matrix.counts[c * n + c];
        trace += tp;
        let predicted_c: u64 = (0..n).map(|t| matrix.counts[t * n + c]).sum();
        let support: u64 = (0..n).map(|p| matrix.counts[c * n + p]).sum();
        let precision = if predicted_c == 0 { 0.0 } else { tp as f64 / predicted_c as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        per_class.push(ClassMetrics { precision, recall, f1, support });
    }
    let k = n as f64;
    Ok(MetricsReport {
        classes: matrix.classes.clone(),
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
        accuracy: trace as f64 / total as f64,
        sample_count: total,
        per_class,
    })
}

impl<L: Label> MetricsReport<L> {
    /// Aligned plain-text report.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>10} {:>10} {:>10} {:>10}\n", "class", "precision", "recall", "f1", "support"));
        for (c, m) in self.classes.iter().zip(&self.per_class) {
            out.push_str(&format!(
                "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10}\n",
                c.to_string(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10}\n",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1, self.sample_count
        ));
        out.push_str(&format!("accuracy   {:.4} over {} samples\n", self.accuracy, self.sample_count));
        out
    }

    /// Header of the machine-readable summary row.
    pub fn csv_header() -> &'static str {
        "model,accuracy,avePrecision,aveRecall,aveF1"
    }

    /// Machine-readable summary row (accuracy and macro averages).
    pub fn csv_row(&self, model_name: &str) -> String {
        format!(
            "{model_name},{:.6},{:.6},{:.6},{:.6}",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        )
    }
}

/// Binary quality classes for the high/low evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QualityClass {
    Low,
    High,
}

impl Display for QualityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QualityClass::Low => "low",
            QualityClass::High => "high",
        })
    }
}

/// Default split point: scores below 5 are low quality, 5 and above high.
pub const BINARIZE_THRESHOLD: u8 = 5;

/// Maps integer scores (2..=9) to [`QualityClass`] by threshold.
pub fn binarize(scores: &[u8], threshold: u8) -> Result<Vec<QualityClass>> {
    if !(2..=9).contains(&threshold) {
        return Err(Error::Config(format!("binarize threshold {threshold} outside 2..=9")));
    }
    scores
        .iter()
        .map(|&s| {
            if !(2..=9).contains(&s) {
                return Err(Error::Data(format!("score {s} outside 2..=9")));
            }
            Ok(if s < threshold { QualityClass::Low } else { QualityClass::High })
        })
        .collect()
}

/// Relative improvement of `candidate` over `baseline`, in percent, reported
/// to one decimal. The fractional part beyond the first decimal is dropped
/// (truncation toward zero), which is how the published figures read:
/// (0.253, 0.24) -> 5.4 and (0.253, 0.19) -> 33.1.
pub fn improvement(candidate: f64, baseline: f64) -> Result<f64> {
    if !candidate.is_finite() || !baseline.is_finite() {
        return Err(Error::Numeric("improvement needs finite inputs".into()));
    }
    if baseline <= 0.0 {
        return Err(Error::Numeric(format!("improvement baseline must be positive, got {baseline}")));
    }
    let pct = 100.0 * (candidate - baseline) / baseline;
    Ok((pct * 10.0).trunc() / 10.0)
}

//! Multiclass evaluation: confusion matrix, macro precision/recall/F1 and
//! micro accuracy, all reported as percentages.
//!
//! Macro-F1 is the mean of the per-class F1 scores. It is generally *not* the
//! harmonic mean of macro-precision and macro-recall; see
//! [`not_harmonic_mean_witness`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truths} truths but {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("class index {index} out of range for {classes} classes")]
    UnknownLeaf { index: usize, classes: usize },
}

/// Which classes enter the macro averages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroAverage {
    /// Every taxonomy leaf, including classes absent from the sample.
    #[default]
    AllClasses,
    /// Only classes that occur among the true labels.
    PresentClasses,
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        let mut m = Self::new(classes);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), classes, "confusion matrix must be square");
            for (p, &c) in row.iter().enumerate() {
                m.counts[t * classes + p] = c;
            }
        }
        m
    }

    pub fn from_pairs(truths: &[usize], predictions: &[usize], classes: usize) -> Result<Self, MetricsError> {
        if truths.len() != predictions.len() {
            return Err(MetricsError::LengthMismatch {
                truths: truths.len(),
                predictions: predictions.len(),
            });
        }
        if truths.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truths.iter().zip(predictions) {
            for index in [t, p] {
                if index >= classes {
                    return Err(MetricsError::UnknownLeaf { index, classes });
                }
            }
            m.counts[t * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Column sum: how often `c` was predicted.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// Row sum: how often `c` was the truth.
    pub fn actual(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub micro_accuracy: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn class_scores(m: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..m.classes())
        .map(|c| {
            let tp = m.true_positives(c);
            let precision = ratio(tp, m.predicted(c));
            let recall = ratio(tp, m.actual(c));
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: m.actual(c),
            }
        })
        .collect()
}

/// Metrics of a confusion matrix. Zero denominators yield 0.
pub fn report_from_matrix(m: &ConfusionMatrix, average: MacroAverage) -> EvalReport {
    let per_class = class_scores(m);
    let included: Vec<&ClassScores> = match average {
        MacroAverage::AllClasses => per_class.iter().collect(),
        MacroAverage::PresentClasses => per_class.iter().filter(|s| s.support > 0).collect(),
    };
    let mean = |f: fn(&ClassScores) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            100.0 * included.iter().map(|s| f(s)).sum::<f64>() / included.len() as f64
        }
    };
    EvalReport {
        macro_f1: mean(|s| s.f1),
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        micro_accuracy: 100.0 * ratio(m.trace(), m.total()),
        per_class,
    }
}

/// Evaluates predicted class indices against true class indices.
pub fn evaluate(truths: &[usize], predictions: &[usize], classes: usize) -> Result<EvalReport, MetricsError> {
    evaluate_with(truths, predictions, classes, MacroAverage::AllClasses)
}

pub fn evaluate_with(
    truths: &[usize],
    predictions: &[usize],
    classes: usize,
    average: MacroAverage,
) -> Result<EvalReport, MetricsError> {
    let m = ConfusionMatrix::from_pairs(truths, predictions, classes)?;
    Ok(report_from_matrix(&m, average))
}

/// A confusion matrix whose macro-F1 differs from the harmonic mean of its
/// macro-precision and macro-recall by more than 0.01 percentage points.
pub fn not_harmonic_mean_witness() -> ConfusionMatrix {
    let m = ConfusionMatrix::from_rows(&[vec![9, 1], vec![5, 5]]);
    let r = report_from_matrix(&m, MacroAverage::AllClasses);
    let gap = (r.macro_f1 - harmonic(r.macro_precision, r.macro_recall)).abs();
    assert!(gap > 0.01, "witness gap {gap} too small");
    m
}

/// Harmonic mean of macro-precision and macro-recall, in percent.
pub fn harmonic_of_macros(r: &EvalReport) -> f64 {
    harmonic(r.macro_precision, r.macro_recall)
}

/// Mean and sample standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fixed-width comparison table, one row per metric and one column per model.
pub fn comparison_table(title: &str, columns: &[(&str, &[EvalReport])]) -> String {
    let rows: [(&str, fn(&EvalReport) -> f64); 4] = [
        ("F1", |r| r.macro_f1),
        ("Precision", |r| r.macro_precision),
        ("Recall", |r| r.macro_recall),
        ("Accuracy", |r| r.micro_accuracy),
    ];
    let with_sd = columns.iter().any(|(_, rs)| rs.len() > 1);
    let width = if with_sd { 20 } else { 12 };
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let _ = write!(out, "{:<10}", "Measure");
    for (name, _) in columns {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(10 + columns.len() * (width + 1)));
    for (label, f) in rows {
        let _ = write!(out, "{label:<10}");
        for (_, reports) in columns {
            let xs: Vec<f64> = reports.iter().map(f).collect();
            let (mean, sd) = mean_sd(&xs);
            let cell = if with_sd {
                format!("{mean:.3} ± {sd:.3}")
            } else {
                format!("{mean:.3}")
            };
            let _ = write!(out, " {cell:>width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn perfect_classifier() {
        let t = [0, 1, 2, 1, 0];
        let r = evaluate(&t, &t, 3).unwrap();
        for v in [r.macro_f1, r.macro_precision, r.macro_recall, r.micro_accuracy] {
            assert!(close(v, 100.0));
        }
    }

    #[test]
    fn symmetric_two_class_matrix() {
        let m = ConfusionMatrix::from_rows(&[vec![2, 1], vec![1, 2]]);
        let r = report_from_matrix(&m, MacroAverage::AllClasses);
        let two_thirds = 200.0 / 3.0;
        for v in [r.macro_f1, r.macro_precision, r.macro_recall, r.micro_accuracy] {
            assert!(close(v, two_thirds), "{v}");
        }
        assert_eq!(format!("{:.3}", r.macro_f1), "66.667");
    }

    #[test]
    fn absent_class_scores_zero_and_counts_in_macro() {
        // Class 2 never occurs in truths or predictions.
        let r = evaluate(&[0, 1, 0, 1], &[0, 1, 0, 1], 3).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.per_class[2].recall, 0.0);
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!(close(r.macro_f1, 200.0 / 3.0));
        assert!(close(r.micro_accuracy, 100.0));
        let present = evaluate_with(&[0, 1, 0, 1], &[0, 1, 0, 1], 3, MacroAverage::PresentClasses).unwrap();
        assert!(close(present.macro_f1, 100.0));
    }

    #[test]
    fn errors() {
        assert_eq!(
            evaluate(&[0], &[0, 1], 2).unwrap_err(),
            MetricsError::LengthMismatch { truths: 1, predictions: 2 }
        );
        assert_eq!(evaluate(&[], &[], 2).unwrap_err(), MetricsError::EmptyInput);
        assert_eq!(
            evaluate(&[0], &[5], 2).unwrap_err(),
            MetricsError::UnknownLeaf { index: 5, classes: 2 }
        );
    }

    #[test]
    fn witness_values() {
        let m = not_harmonic_mean_witness();
        let r = report_from_matrix(&m, MacroAverage::AllClasses);
        assert!(close(r.per_class[0].f1, 0.75));
        assert!(close(r.per_class[1].f1, 0.625));
        assert!(close(r.macro_f1, 68.75));
        assert!(close(r.macro_recall, 70.0));
        assert!(close(r.macro_precision, 100.0 * (9.0 / 14.0 + 5.0 / 6.0) / 2.0));
        assert!(harmonic_of_macros(&r) - r.macro_f1 > 3.0);
    }

    #[test]
    fn balanced_diagonal_has_no_gap() {
        let m = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 4]]);
        let r = report_from_matrix(&m, MacroAverage::AllClasses);
        assert_eq!(r.macro_f1, harmonic_of_macros(&r));
    }

    #[test]
    fn table_shape() {
        let r = evaluate(&[0, 1], &[0, 1], 2).unwrap();
        let table = comparison_table("demo", &[("Flat", std::slice::from_ref(&r)), ("Hierarchical", std::slice::from_ref(&r))]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[1].contains("Flat") && lines[1].contains("Hierarchical"));
        assert!(lines[3].starts_with("F1") && lines[3].contains("100.000"));
        assert!(lines[6].starts_with("Accuracy"));
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{MgmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification quality. Rates are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub average_recall: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_minutes: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-F1, accuracy and average recall over all `n_classes` classes.
/// Classes that never occur in gold or predictions score F1 = 0.
pub fn compute_metrics(predictions: &[usize], gold: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if predictions.len() != gold.len() {
        return Err(MgmError::Shape(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(MgmError::Precondition("no examples to evaluate".into()));
    }
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&c| c >= n_classes) {
        return Err(MgmError::Precondition(format!(
            "class {bad} outside {n_classes} classes"
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &g) in predictions.iter().zip(gold) {
        confusion[g][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision: 100.0 * precision,
                recall: 100.0 * recall,
                f1: 100.0 * f1,
                support,
            }
        })
        .collect();
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let k = n_classes as f64;
    Ok(MetricsReport {
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
        accuracy: 100.0 * ratio(correct, gold.len()),
        average_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        per_class,
        confusion,
        train_minutes: None,
    })
}

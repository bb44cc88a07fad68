use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 (0 whenever a denominator is 0) and
/// their support-weighted F1 average.
pub fn compute_metrics(y_true: &[usize], y_pred: &[usize], labels: &[String]) -> Result<MetricsReport> {
    if y_true.is_empty() {
        return Err(Error::Input("cannot score an empty split".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k = labels.len();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&c| c >= k) {
        return Err(Error::Input(format!("class index {bad} outside {k} labels")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    let total = y_true.len();
    let mut classes = Vec::with_capacity(k);
    let mut weighted = 0.0;
    for c in 0..k {
        let tp = confusion[c][c];
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let support: usize = confusion[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        weighted += support as f64 / total as f64 * f1;
        classes.push(ClassMetrics {
            label: labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let correct = (0..k).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        classes,
        weighted_f1: weighted,
        accuracy: ratio(correct, total),
        confusion,
        total,
    })
}

pub fn weighted_f1(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    let labels: Vec<String> = (0..num_classes).map(|c| c.to_string()).collect();
    Ok(compute_metrics(y_true, y_pred, &labels)?.weighted_f1)
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  precision  recall     f1  support", "class")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<width$}  {:>9.4}  {:>6.4}  {:>5.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(f, "accuracy={:.4} weighted_f1={:.4} total={}", self.accuracy, self.weighted_f1, self.total)?;
        let mut s = String::from("confusion");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = write!(s, " [{}]", cells.join(" "));
        }
        writeln!(f, "{s}")
    }
}

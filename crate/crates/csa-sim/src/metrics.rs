//! Classification and link metrics: Top-1 accuracy, confusion matrices,
//! and index error rates.

use crate::error::SimError;

/// Prediction counts with rows as true class and columns as predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self { counts: vec![vec![0; c]; c], class_names }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<(), SimError> {
        let c = self.n_classes();
        if true_class >= c || predicted >= c {
            return Err(SimError::InvalidParameter(format!(
                "class out of range: true {true_class}, predicted {predicted}, C = {c}"
            )));
        }
        self.counts[true_class][predicted] += 1;
        Ok(())
    }

    /// Merge partial matrices (counts add); shapes must match.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), SimError> {
        if self.class_names != other.class_names {
            return Err(SimError::DimensionMismatch("confusion matrices have different classes".into()));
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(orow) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row-normalized percentages; empty rows stay all-zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                if sum == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter().map(|&x| 100.0 * x as f64 / sum as f64).collect()
                }
            })
            .collect()
    }

    /// Diagonal of the row-normalized view: per-class accuracy in percent.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.row_percentages().iter().enumerate().map(|(i, row)| row[i]).collect()
    }

    /// CSV with a header row of class names and one row of percentages
    /// (2 decimals) per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(self.row_percentages()) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Fraction of predictions equal to their label.
pub fn top1(predictions: &[usize], labels: &[usize]) -> Result<f64, SimError> {
    if predictions.is_empty() {
        return Err(SimError::InvalidParameter("top1 over empty input".into()));
    }
    if predictions.len() != labels.len() {
        return Err(SimError::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Build a confusion matrix from parallel prediction/label slices.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix, SimError> {
    if predictions.len() != labels.len() {
        return Err(SimError::DimensionMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(class_names);
    for (&p, &l) in predictions.iter().zip(labels) {
        cm.record(l, p)?;
    }
    Ok(cm)
}

/// Fraction of mismatched positions between sent and received indices.
pub fn index_error_rate(sent: &[u8], received: &[u8]) -> Result<f64, SimError> {
    if sent.len() != received.len() {
        return Err(SimError::DimensionMismatch(format!("{} sent vs {} received", sent.len(), received.len())));
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

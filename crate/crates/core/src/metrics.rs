//! Confusion matrix, macro-averaged classification metrics and label RMSE.

use std::fmt;

use crate::error::{Error, Result};

/// `K x K` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

fn check_pairs(true_labels: &[usize], pred_labels: &[usize], k: usize) -> Result<()> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::Validation(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    for (i, (&t, &p)) in true_labels.iter().zip(pred_labels).enumerate() {
        if t >= k || p >= k {
            return Err(Error::Validation(format!(
                "pair {i} (true {t}, pred {p}) outside [0, {k})"
            )));
        }
    }
    Ok(())
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        })
    }

    pub fn from_labels(true_labels: &[usize], pred_labels: &[usize], k: usize) -> Result<Self> {
        let mut cm = Self::new(k)?;
        check_pairs(true_labels, pred_labels, k)?;
        for (&t, &p) in true_labels.iter().zip(pred_labels) {
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.k + pred_class]
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.k..(c + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, c)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.counts.chunks(self.k) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// Absent when built from a confusion matrix alone.
    pub rmse: Option<f64>,
    pub per_class: Vec<ClassStats>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 (zero on a zero denominator) and their
/// unweighted means over the classes that occur in the truth.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsBundle> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Validation("no scored samples".into()));
    }
    let per_class: Vec<ClassStats> = (0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassStats {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();
    let present: Vec<&ClassStats> = per_class.iter().filter(|s| s.support > 0).collect();
    let mean = |f: fn(&ClassStats) -> f64| present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64;
    Ok(MetricsBundle {
        accuracy: ratio(cm.trace(), total),
        precision_macro: mean(|s| s.precision),
        recall_macro: mean(|s| s.recall),
        f1_macro: mean(|s| s.f1),
        rmse: None,
        per_class,
    })
}

/// `sqrt(mean((pred - true)^2))` over integer class indices.
pub fn rmse_labels(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::Validation(format!(
            "{} true labels but {} predictions",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    if true_labels.is_empty() {
        return Err(Error::Validation("rmse of an empty label list".into()));
    }
    let sq: f64 = true_labels
        .iter()
        .zip(pred_labels)
        .map(|(&t, &p)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok((sq / true_labels.len() as f64).sqrt())
}

/// Full bundle, RMSE included.
pub fn score(true_labels: &[usize], pred_labels: &[usize], k: usize) -> Result<MetricsBundle> {
    let cm = ConfusionMatrix::from_labels(true_labels, pred_labels, k)?;
    let mut bundle = classification_metrics(&cm)?;
    bundle.rmse = Some(rmse_labels(true_labels, pred_labels)?);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_counts() {
        let cm = ConfusionMatrix::from_labels(&[0, 1, 2, 3], &[1, 1, 2, 2], 4).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                let want = [(0, 1), (1, 1), (2, 2), (3, 2)].contains(&(t, p)) as u64;
                assert_eq!(cm.get(t, p), want);
            }
        }
    }

    #[test]
    fn two_class_worked_example() {
        let cm = ConfusionMatrix::from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let m = classification_metrics(&cm).unwrap();
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert!((m.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert!((m.precision_macro - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.recall_macro, 0.75);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.rmse, None);
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 3, 3, 2];
        let m = score(&labels, &labels, 4).unwrap();
        assert_eq!((m.accuracy, m.precision_macro, m.recall_macro, m.f1_macro), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.rmse, Some(0.0));
    }

    #[test]
    fn absent_truth_class_is_excluded_from_means() {
        // Class 2 never occurs in the truth but is predicted once.
        let m = score(&[0, 1, 1], &[0, 1, 2], 3).unwrap();
        assert_eq!(m.per_class[2].support, 0);
        assert_eq!(m.recall_macro, (1.0 + 0.5) / 2.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_labels(&[0, 0], &[3, 3]).unwrap(), 3.0);
        assert!((rmse_labels(&[0, 1, 2, 3], &[1, 1, 2, 2]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse_labels(&[], &[]), Err(Error::Validation(_))));
    }

    #[test]
    fn errors() {
        let msg = ConfusionMatrix::from_labels(&[0, 4], &[0, 0], 4).unwrap_err().to_string();
        assert!(msg.contains("pair 1"), "{msg}");
        assert!(classification_metrics(&ConfusionMatrix::new(3).unwrap()).is_err());
    }
}

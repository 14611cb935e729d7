//! Confusion matrix and the support-weighted metric block.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::CLASS_COUNT;
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASS_COUNT]; CLASS_COUNT],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASS_COUNT).map(|c| self.counts[c][c]).sum()
    }

    /// Row sums: how many examples truly belong to each class.
    pub fn support(&self) -> [u64; CLASS_COUNT] {
        let mut s = [0; CLASS_COUNT];
        for (t, row) in self.counts.iter().enumerate() {
            s[t] = row.iter().sum();
        }
        s
    }

    pub fn predicted(&self) -> [u64; CLASS_COUNT] {
        let mut s = [0; CLASS_COUNT];
        for row in &self.counts {
            for (p, c) in row.iter().enumerate() {
                s[p] += c;
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "true\\pred,0,1,2")?;
        for (t, row) in self.counts.iter().enumerate() {
            writeln!(w, "{t},{},{},{}", row[0], row[1], row[2])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii")
    }
}

pub fn confusion(true_labels: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted.len() {
        return Err(Error::dim("predicted label count", true_labels.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&t, &p)) in true_labels.iter().zip(predicted).enumerate() {
        if t >= CLASS_COUNT || p >= CLASS_COUNT {
            return Err(Error::Domain(format!(
                "label out of range at index {i}: true {t}, predicted {p}"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

/// Accuracy plus support-weighted precision, recall and F1. `mse` is the
/// misclassification rate `1 − accuracy`; the one-hot output MSE is reported
/// separately by the evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mse: f64,
}

pub fn metric_block(cm: &ConfusionMatrix) -> Result<MetricBlock> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("metrics of an empty confusion matrix".into()));
    }
    let support = cm.support();
    let predicted = cm.predicted();
    let n = total as f64;
    let (mut precision, mut f1) = (0.0, 0.0);
    for c in 0..CLASS_COUNT {
        let tp = cm.counts[c][c] as f64;
        let p = if predicted[c] > 0 { tp / predicted[c] as f64 } else { 0.0 };
        let r = if support[c] > 0 { tp / support[c] as f64 } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = support[c] as f64 / n;
        precision += w * p;
        f1 += w * f;
    }
    let accuracy = cm.trace() as f64 / n;
    // Σ (support_c / n)·(tp_c / support_c) collapses to trace / n.
    let recall = accuracy;
    Ok(MetricBlock {
        accuracy,
        precision,
        recall,
        f1,
        mse: 1.0 - accuracy,
    })
}

impl fmt::Display for MetricBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{:>10}", "Indicators", "Value")?;
        for (name, v) in [
            ("Accuracy", self.accuracy),
            ("Precision", self.precision),
            ("Recall", self.recall),
            ("F1-Score", self.f1),
            ("MSE", self.mse),
        ] {
            writeln!(f, "{name:<12}{v:>10.4}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        let cm = ConfusionMatrix {
            counts: [[5, 0, 0], [0, 5, 0], [0, 0, 5]],
        };
        let m = metric_block(&cm).unwrap();
        assert_eq!(
            m,
            MetricBlock {
                accuracy: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                mse: 0.0
            }
        );
    }

    #[test]
    fn hand_count() {
        let cm = confusion(&[0, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(cm.counts, [[1, 1, 0], [0, 1, 0], [0, 0, 0]]);
    }

    #[test]
    fn empty_and_out_of_range() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(metric_block(&cm).is_err());
        assert!(confusion(&[3], &[0]).is_err());
        assert!(confusion(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn collapsed_rows() {
        let cm = ConfusionMatrix {
            counts: [[8, 2, 0], [1, 9, 0], [0, 0, 10]],
        };
        let m = metric_block(&cm).unwrap();
        assert!((m.accuracy - 0.9).abs() < 1e-15);
        assert!((m.recall - 0.9).abs() < 1e-15);
        assert!((m.mse - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_predicted_support_precision_is_zero() {
        let cm = confusion(&[0, 1, 2], &[0, 0, 0]).unwrap();
        let m = metric_block(&cm).unwrap();
        // Only class 0 has predictions: precision 1/3 weighted by support 1/3.
        assert!((m.precision - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn table_rows_present() {
        let s = metric_block(&confusion(&[0, 1], &[0, 1]).unwrap()).unwrap().to_string();
        for row in ["Accuracy", "Precision", "Recall", "F1-Score", "MSE"] {
            assert!(s.contains(row));
        }
    }

    proptest! {
        #[test]
        fn weighted_recall_is_accuracy(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..400)) {
            let (t, p): (Vec<_>, Vec<_>) = labels.into_iter().unzip();
            let m = metric_block(&confusion(&t, &p).unwrap()).unwrap();
            prop_assert_eq!(m.recall, m.accuracy);
            for v in [m.accuracy, m.precision, m.recall, m.f1, m.mse] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn order_invariant(labels in proptest::collection::vec((0usize..3, 0usize..3), 1..200)) {
            let (t, p): (Vec<_>, Vec<_>) = labels.iter().copied().unzip();
            let (tr, pr): (Vec<_>, Vec<_>) = labels.into_iter().rev().unzip();
            prop_assert_eq!(confusion(&t, &p).unwrap(), confusion(&tr, &pr).unwrap());
        }
    }
}

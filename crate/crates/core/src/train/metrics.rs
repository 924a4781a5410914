use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// One-vs-rest counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`, classes in order `1..=k`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassCounts>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Harmonic mean of macro precision and macro recall.
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Builds `confusion[true-1][pred-1]`.
pub fn confusion_matrix(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(Error::Dimension(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == 0 || t > n_classes || p == 0 || p > n_classes {
            return Err(Error::Validation(format!("label pair ({t}, {p}) outside 1..={n_classes}")));
        }
        m[t - 1][p - 1] += 1;
    }
    Ok(m)
}

impl MetricsReport {
    /// Macro metrics over all classes of a square confusion matrix. A 0/0
    /// precision or recall counts as 0.
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let per_class: Vec<ClassCounts> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let row: usize = confusion[c].iter().sum();
                let col: usize = confusion.iter().map(|r| r[c]).sum();
                ClassCounts {
                    tp,
                    fp: col - tp,
                    fn_: row - tp,
                    tn: total + tp - row - col,
                }
            })
            .collect();
        let precision: Vec<f64> = per_class.iter().map(|c| ratio(c.tp, c.tp + c.fp)).collect();
        let recall: Vec<f64> = per_class.iter().map(|c| ratio(c.tp, c.tp + c.fn_)).collect();
        let macro_precision = precision.iter().sum::<f64>() / k as f64;
        let macro_recall = recall.iter().sum::<f64>() / k as f64;
        let macro_f1 = if macro_precision + macro_recall == 0.0 {
            0.0
        } else {
            2.0 * macro_precision * macro_recall / (macro_precision + macro_recall)
        };
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        Self {
            accuracy: ratio(correct, total),
            confusion,
            per_class,
            precision,
            recall,
            macro_precision,
            macro_recall,
            macro_f1,
        }
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<Self> {
        Ok(Self::from_confusion(confusion_matrix(truth, pred, n_classes)?))
    }

    pub fn n_samples(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Confusion matrix as CSV with a `true\pred` header row.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut out = String::from("true\\pred");
        for c in 1..=k {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &Model, ds: &LabeledDataset) -> Result<MetricsReport> {
    let pred = model.predict(ds)?;
    MetricsReport::from_predictions(&ds.labels(), &pred, model.config.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_class_hand_example() {
        let m = MetricsReport::from_confusion(vec![vec![8, 2], vec![4, 6]]);
        let p = (8.0 / 12.0 + 6.0 / 8.0) / 2.0;
        let r = (0.8 + 0.6) / 2.0;
        assert!((m.macro_precision - p).abs() < 1e-12);
        assert!((m.macro_recall - r).abs() < 1e-12);
        assert!((m.macro_f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
        assert!((m.macro_f1 - 119.0 / 169.0).abs() < 1e-12);
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert_eq!(m.per_class[0], ClassCounts { tp: 8, fp: 4, fn_: 2, tn: 6 });
    }

    #[test]
    fn perfect_predictions() {
        let y = [1, 2, 3, 3, 1];
        let m = MetricsReport::from_predictions(&y, &y, 3).unwrap();
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn never_predicted_class_contributes_zero_precision() {
        let m = MetricsReport::from_predictions(&[1, 2, 3], &[1, 2, 2], 3).unwrap();
        assert_eq!(m.precision, vec![1.0, 0.5, 0.0]);
        assert_eq!(m.recall, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_layout() {
        let m = MetricsReport::from_confusion(vec![vec![8, 2], vec![4, 6]]);
        assert_eq!(m.confusion_csv(), "true\\pred,1,2\n1,8,2\n2,4,6\n");
    }

    proptest! {
        #[test]
        fn counts_are_consistent(pairs in prop::collection::vec((1usize..5, 1usize..5), 1..200)) {
            let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = MetricsReport::from_predictions(&truth, &pred, 4).unwrap();
            prop_assert_eq!(m.n_samples(), truth.len());
            for (c, counts) in m.per_class.iter().enumerate() {
                let n_true = truth.iter().filter(|&&y| y == c + 1).count();
                let n_pred = pred.iter().filter(|&&y| y == c + 1).count();
                prop_assert_eq!(counts.tp + counts.fn_, n_true);
                prop_assert_eq!(counts.tp + counts.fp, n_pred);
                prop_assert_eq!(counts.tp + counts.fp + counts.fn_ + counts.tn, truth.len());
            }
            prop_assert!(m.macro_f1 >= 0.0 && m.macro_f1 <= 1.0);
        }
    }
}

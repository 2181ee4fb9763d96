use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::forest::Forest;
use super::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when the class was never predicted (precision reported as 0).
    pub no_predictions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_confusion(classes: &[String], confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = classes.len();
        if confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Config("confusion matrix does not match class count".into()));
        }
        let total: usize = confusion.iter().flatten().sum();
        let mut per_class = Vec::with_capacity(k);
        for (c, name) in classes.iter().enumerate() {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_class.push(ClassMetrics {
                class: name.clone(),
                precision,
                recall,
                f1,
                support,
                no_predictions: predicted == 0,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k.max(1) as f64;
        let diag: usize = (0..k).map(|c| confusion[c][c]).sum();
        Ok(Self {
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            accuracy: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
            per_class,
            confusion,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,no_predictions\n");
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.class, m.precision, m.recall, m.f1, m.support, m.no_predictions
            );
        }
        let support: usize = self.per_class.iter().map(|m| m.support).sum();
        let _ = writeln!(
            out,
            "macro,{},{},{},{},false",
            self.macro_precision, self.macro_recall, self.macro_f1, support
        );
        out
    }
}

/// Precision, recall and F1 of `forest` on `test`.
pub fn evaluate(forest: &Forest, test: &LabeledData) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData {
            group: "test".into(),
            reason: "empty table".into(),
        });
    }
    let k = forest.n_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    for (pred, &truth) in forest.predict_all(test)?.into_iter().zip(&test.labels) {
        confusion[truth][pred] += 1;
    }
    EvalReport::from_confusion(&forest.classes, confusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    #[test]
    fn hand_computed_two_class_metrics() {
        let r = EvalReport::from_confusion(&names(2), vec![vec![8, 2], vec![3, 7]]).unwrap();
        assert!((r.per_class[0].precision - 8.0 / 11.0).abs() < 1e-15);
        assert!((r.per_class[0].recall - 0.8).abs() < 1e-15);
        assert!((r.per_class[1].precision - 7.0 / 9.0).abs() < 1e-15);
        assert!((r.per_class[1].recall - 0.7).abs() < 1e-15);
        let f0 = 2.0 * (8.0 / 11.0) * 0.8 / (8.0 / 11.0 + 0.8);
        assert!((r.per_class[0].f1 - f0).abs() < 1e-15);
        assert!((r.macro_recall - 0.75).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].support, 10);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let r = EvalReport::from_confusion(&names(3), vec![vec![4, 0, 0], vec![0, 5, 0], vec![0, 0, 6]]).unwrap();
        assert_eq!((r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn unpredicted_class_is_flagged() {
        let r = EvalReport::from_confusion(&names(2), vec![vec![5, 0], vec![5, 0]]).unwrap();
        assert!(r.per_class[1].no_predictions);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.macro_precision, 0.25);
    }

    #[test]
    fn random_labels_score_near_chance() {
        use crate::model::{train_forest, LabeledData};
        use crate::rng::rng_for;
        use rand::Rng;
        let make = |seed| {
            let mut rng = rng_for(seed, &[]);
            let n = 1400;
            let features: Vec<f64> = (0..n * 5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..7)).collect();
            LabeledData::new(features, labels, 5, names(7)).unwrap()
        };
        let f = train_forest(&make(1), 20, 8, 3).unwrap();
        let r = evaluate(&f, &make(2)).unwrap();
        assert!((r.macro_f1 - 1.0 / 7.0).abs() < 0.05, "{}", r.macro_f1);
    }

    #[test]
    fn csv_has_macro_row() {
        let r = EvalReport::from_confusion(&names(2), vec![vec![1, 0], vec![0, 1]]).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("class,precision,recall,f1,support,no_predictions\n"));
        assert!(csv.lines().last().unwrap().starts_with("macro,1,1,1,2"));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}

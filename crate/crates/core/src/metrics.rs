//! Classification reports: confusion matrix, per-class precision and recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    /// Zero when the class is never predicted.
    pub precision: f64,
    /// Zero when the class has no samples.
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub samples: usize,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub wall_clock_secs: f64,
    pub config: BTreeMap<String, String>,
}

pub fn default_class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| format!("class{c}")).collect()
}

impl EvalReport {
    pub fn from_predictions(
        predictions: &[usize],
        labels: &[usize],
        class_names: &[String],
        wall_clock_secs: f64,
        config: BTreeMap<String, String>,
    ) -> Result<Self> {
        let k = class_names.len();
        if predictions.len() != labels.len() {
            return Err(invalid("predictions and labels differ in length"));
        }
        if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c >= k) {
            return Err(invalid(format!("class id {bad} out of range for {k} classes")));
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for (&p, &l) in predictions.iter().zip(labels) {
            confusion[l][p] += 1;
        }
        let per_class = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                ClassMetrics {
                    name: class_names[c].clone(),
                    precision: if predicted == 0 { 0.0 } else { tp / predicted as f64 },
                    recall: if support == 0 { 0.0 } else { tp / support as f64 },
                    support,
                }
            })
            .collect();
        let hits: usize = (0..k).map(|c| confusion[c][c]).sum();
        Ok(Self {
            accuracy: if labels.is_empty() {
                0.0
            } else {
                hits as f64 / labels.len() as f64
            },
            samples: labels.len(),
            per_class,
            confusion,
            wall_clock_secs,
            config,
        })
    }

    /// Header row of class names, then one row of counts per true class.
    pub fn confusion_csv(&self) -> String {
        let names: Vec<&str> = self.per_class.iter().map(|c| c.name.as_str()).collect();
        let mut out = names.join(",");
        out.push('\n');
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy {:.4} over {} samples", self.accuracy, self.samples);
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>8}", "class", "precision", "recall", "support");
        for c in &self.per_class {
            let _ = writeln!(out, "{:<12} {:>9.4} {:>9.4} {:>8}", c.name, c.precision, c.recall, c.support);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(p: &[usize], l: &[usize], k: usize) -> EvalReport {
        EvalReport::from_predictions(p, l, &default_class_names(k), 0.0, BTreeMap::new()).unwrap()
    }

    #[test]
    fn perfect_predictor() {
        let l = [0, 1, 2, 2, 1, 0];
        let r = report(&l, &l, 3);
        assert_eq!(r.accuracy, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v == 0, i != j || r.per_class[i].support == 0);
            }
        }
    }

    #[test]
    fn constant_predictor() {
        let l = [0, 0, 1, 1, 2, 2];
        let r = report(&[1; 6], &l, 3);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert!((r.per_class[1].precision - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[0].precision, 0.0);
    }

    #[test]
    fn csv_layout() {
        let r = report(&[0, 1, 1], &[0, 1, 0], 2);
        assert_eq!(r.confusion_csv(), "class0,class1\n1,1\n0,1\n");
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(EvalReport::from_predictions(&[3], &[0], &default_class_names(2), 0.0, BTreeMap::new()).is_err());
    }
}

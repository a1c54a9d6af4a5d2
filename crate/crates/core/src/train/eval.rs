use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::Classifier;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Harmonic mean; zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricsReport {
    /// Precision of a class never predicted, and recall of a class never
    /// present, count as zero.
    pub fn from_predictions(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Data("cannot evaluate on an empty dataset".into()));
        }
        if predicted.len() != truth.len() {
            return Err(Error::Data("prediction and label counts differ".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::Data(format!("class index out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..classes)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
                let support: usize = confusion[c].iter().sum();
                let precision = if predicted_c == 0 { 0.0 } else { tp / predicted_c as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support,
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / classes as f64;
        Ok(MetricsReport {
            accuracy: correct as f64 / truth.len() as f64,
            per_class,
            macro_f1,
            confusion,
        })
    }

    /// Per-class table followed by accuracy and macro F1.
    pub fn summary(&self, class_names: &[String]) -> String {
        let width = class_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  precision  recall  f1      support\n", "class");
        for (i, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
            out += &format!(
                "{name:<width$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>7}\n",
                m.precision, m.recall, m.f1, m.support
            );
        }
        out += &format!("accuracy {:.4}  macro-F1 {:.4}\n", self.accuracy, self.macro_f1);
        out
    }
}

pub(crate) fn argmax_rows(probs: &[f32], classes: usize) -> Vec<usize> {
    probs
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Class probabilities of every sample, in dataset order.
pub fn predict_all(model: &dyn Classifier, data: &Dataset, batch_size: usize) -> Result<Vec<f32>> {
    let order: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len() * model.num_classes());
    for idx in batches(&order, batch_size) {
        let (x, _) = data.batch(&idx)?;
        out.extend(model.predict(&x)?.to_vec());
    }
    Ok(out)
}

/// Accuracy, per-class precision/recall/F1, macro F1 and the confusion
/// matrix of `model` on `data` (evaluation mode).
pub fn evaluate(model: &dyn Classifier, data: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if model.num_classes() != data.num_classes() {
        return Err(Error::Data(format!(
            "model predicts {} classes, data has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let probs = predict_all(model, data, batch_size)?;
    let predicted = argmax_rows(&probs, model.num_classes());
    MetricsReport::from_predictions(&predicted, &data.labels, model.num_classes())
}

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1. Classes absent from both sequences are excluded
/// from the macro average.
pub fn action_metrics(predictions: &[usize], labels: &[usize]) -> Result<ActionMetrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::contract(format!(
            "metrics over {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n_classes = predictions.iter().chain(labels).max().copied().unwrap_or(0) + 1;
    let (mut tp, mut fp, mut fne) = (vec![0usize; n_classes], vec![0usize; n_classes], vec![0usize; n_classes]);
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fne[l] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        if tp[c] + fp[c] + fne[c] == 0 {
            continue;
        }
        present += 1;
        f1_sum += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fne[c]) as f64;
    }
    Ok(ActionMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: f1_sum / present as f64,
    })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

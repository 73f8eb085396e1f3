//! Cross-entropy loss over softmax outputs.

use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Label-set-normalized cross-entropy: `-(1/|A|) * sum_i y_i * ln(p_i)`.
///
/// `target` is the true class index (one-hot ground truth), `probs` a
/// probability vector over the `|A|` classes. The `1/|A|` factor is part
/// of the definition, not an average over examples.
pub fn cross_entropy_loss(target: usize, probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Usage("cross-entropy over empty probability vector".into()));
    }
    if target >= probs.len() {
        return Err(Error::Usage(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    if !probs[target].is_finite() {
        return Err(Error::Usage(format!(
            "non-finite probability {} for class {target}",
            probs[target]
        )));
    }
    let p = probs[target].max(PROB_CLAMP);
    Ok(-p.ln() / probs.len() as f64)
}

/// Gradient of [`cross_entropy_loss`] composed with softmax, with respect
/// to the logits: `(p - y) / |A|`.
pub fn softmax_cross_entropy_grad(target: usize, probs: &[f64]) -> Vec<f64> {
    let n = probs.len() as f64;
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - if i == target { 1.0 } else { 0.0 }) / n)
        .collect()
}

//! ReLU and softmax.

use crate::error::{Error, Result};
use crate::kernel::tensor::Tensor2;

/// Elementwise `max(0, x)`.
pub fn relu_forward(input: &Tensor2) -> Tensor2 {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Routes gradient only through positions that were strictly positive in
/// the forward pass.
pub fn relu_backward(forward_input: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    if forward_input.channels() != upstream.channels() || forward_input.length() != upstream.length() {
        return Err(Error::Shape(format!(
            "relu backward: input {}x{} vs upstream {}x{}",
            forward_input.channels(),
            forward_input.length(),
            upstream.channels(),
            upstream.length()
        )));
    }
    let mut grad = upstream.clone();
    for (g, &x) in grad.values_mut().iter_mut().zip(forward_input.values()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// Numerically-stabilized softmax (max-subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

//! Fully-connected layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a dense layer `y = W x + b`.
///
/// Weights are row-major with shape `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("dense dimensions must be positive".into()));
        }
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::Shape(format!(
                "dense weights: expected {} values, got {}",
                self.in_dim * self.out_dim,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::Shape(format!(
                "dense bias: expected {} values, got {}",
                self.out_dim,
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `W x + b`.
pub fn dense_forward(input: &[f64], params: &DenseLayerParams) -> Result<Vec<f64>> {
    params.validate()?;
    if input.len() != params.in_dim {
        return Err(Error::Shape(format!(
            "dense input has dim {}, layer expects {}",
            input.len(),
            params.in_dim
        )));
    }
    let mut out = params.bias.clone();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &params.weights[o * params.in_dim..(o + 1) * params.in_dim];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *out_v += acc;
    }
    Ok(out)
}

/// Backward pass of [`dense_forward`].
///
/// Accumulates `dL/dW = upstream ⊗ input` and `dL/db = upstream` into the
/// provided buffers and returns `dL/dx = Wᵀ upstream`.
pub fn dense_backward(
    input: &[f64],
    params: &DenseLayerParams,
    upstream: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Vec<f64>> {
    if upstream.len() != params.out_dim {
        return Err(Error::Shape(format!(
            "dense upstream gradient has dim {}, expected {}",
            upstream.len(),
            params.out_dim
        )));
    }
    let mut grad_input = vec![0.0; params.in_dim];
    for (o, &g) in upstream.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let base = o * params.in_dim;
        for i in 0..params.in_dim {
            grad_weights[base + i] += g * input[i];
            grad_input[i] += g * params.weights[base + i];
        }
    }
    Ok(grad_input)
}

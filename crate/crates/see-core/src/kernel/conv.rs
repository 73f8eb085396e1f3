//! Valid (no-padding) 1-D cross-correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::tensor::Tensor2;

/// Parameters of a 1-D convolution layer.
///
/// Weights are stored `[out_channels][in_channels][kernel_width]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_width: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_width,
            stride,
            weights: vec![0.0; out_channels * in_channels * kernel_width],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_width == 0 {
            return Err(Error::Config("conv dimensions must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        let expected = self.out_channels * self.in_channels * self.kernel_width;
        if self.weights.len() != expected {
            return Err(Error::Shape(format!(
                "conv weights: expected {expected} values, got {}",
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "conv bias: expected {} values, got {}",
                self.out_channels,
                self.bias.len()
            )));
        }
        Ok(())
    }

    #[inline]
    fn weight(&self, out_c: usize, in_c: usize, k: usize) -> f64 {
        self.weights[(out_c * self.in_channels + in_c) * self.kernel_width + k]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Output length of a valid convolution: `floor((len - width) / stride) + 1`.
#[inline]
pub fn conv1d_output_length(input_length: usize, kernel_width: usize, stride: usize) -> usize {
    (input_length - kernel_width) / stride + 1
}

/// Valid cross-correlation plus bias.
pub fn conv1d_forward(input: &Tensor2, params: &ConvLayerParams) -> Result<Tensor2> {
    params.validate()?;
    if input.channels() != params.in_channels {
        return Err(Error::Shape(format!(
            "conv input has {} channels, layer expects {}",
            input.channels(),
            params.in_channels
        )));
    }
    if input.length() < params.kernel_width {
        return Err(Error::Shape(format!(
            "conv input length {} shorter than kernel width {}",
            input.length(),
            params.kernel_width
        )));
    }

    let out_len = conv1d_output_length(input.length(), params.kernel_width, params.stride);
    let mut out = Tensor2::zeros(params.out_channels, out_len);
    for oc in 0..params.out_channels {
        for t in 0..out_len {
            let start = t * params.stride;
            let mut acc = params.bias[oc];
            for ic in 0..params.in_channels {
                let row = input.channel(ic);
                for k in 0..params.kernel_width {
                    acc += params.weight(oc, ic, k) * row[start + k];
                }
            }
            *out.at_mut(oc, t) = acc;
        }
    }
    Ok(out)
}

/// Backward pass of [`conv1d_forward`].
///
/// Accumulates weight and bias gradients into `grad_weights` / `grad_bias`
/// (laid out exactly like [`ConvLayerParams`]) and returns the gradient
/// with respect to the input.
pub fn conv1d_backward(
    input: &Tensor2,
    params: &ConvLayerParams,
    upstream: &Tensor2,
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor2> {
    let out_len = conv1d_output_length(input.length(), params.kernel_width, params.stride);
    if upstream.channels() != params.out_channels || upstream.length() != out_len {
        return Err(Error::Shape(format!(
            "conv upstream gradient is {}x{}, expected {}x{}",
            upstream.channels(),
            upstream.length(),
            params.out_channels,
            out_len
        )));
    }
    let mut grad_input = Tensor2::zeros(input.channels(), input.length());
    for oc in 0..params.out_channels {
        let up_row = upstream.channel(oc);
        for t in 0..out_len {
            let g = up_row[t];
            if g == 0.0 {
                continue;
            }
            let start = t * params.stride;
            grad_bias[oc] += g;
            for ic in 0..params.in_channels {
                let in_row = input.channel(ic);
                let w_base = (oc * params.in_channels + ic) * params.kernel_width;
                for k in 0..params.kernel_width {
                    grad_weights[w_base + k] += g * in_row[start + k];
                    *grad_input.at_mut(ic, start + k) += g * params.weights[w_base + k];
                }
            }
        }
    }
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(input: &[Vec<f64>], params: &ConvLayerParams) -> Vec<Vec<f64>> {
        let out = conv1d_forward(&Tensor2::from_rows(input).unwrap(), params).unwrap();
        (0..out.channels()).map(|c| out.channel(c).to_vec()).collect()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let p = ConvLayerParams {
            in_channels: 1,
            out_channels: 1,
            kernel_width: 1,
            stride: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        assert_eq!(
            conv(&[vec![1.0, 2.0, 3.0, 4.0]], &p),
            vec![vec![1.0, 2.0, 3.0, 4.0]]
        );
    }

    #[test]
    fn width_two_sums_adjacent_pairs() {
        // Direct summation: [1+2, 2+3].
        let p = ConvLayerParams {
            in_channels: 1,
            out_channels: 1,
            kernel_width: 2,
            stride: 1,
            weights: vec![1.0, 1.0],
            bias: vec![0.0],
        };
        assert_eq!(conv(&[vec![1.0, 2.0, 3.0]], &p), vec![vec![3.0, 5.0]]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let p = ConvLayerParams {
            in_channels: 2,
            out_channels: 3,
            kernel_width: 2,
            stride: 1,
            weights: (0..12).map(|i| i as f64).collect(),
            bias: vec![0.0; 3],
        };
        let out = conv1d_forward(&Tensor2::zeros(2, 5), &p).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let p = ConvLayerParams::zeros(3, 1, 2, 1);
        let err = conv1d_forward(&Tensor2::zeros(2, 5), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn kernel_longer_than_input_is_rejected() {
        let p = ConvLayerParams::zeros(1, 1, 4, 1);
        assert!(conv1d_forward(&Tensor2::zeros(1, 3), &p).is_err());
    }

    #[test]
    fn stride_two_skips_positions() {
        let p = ConvLayerParams {
            in_channels: 1,
            out_channels: 1,
            kernel_width: 2,
            stride: 2,
            weights: vec![1.0, 1.0],
            bias: vec![0.5],
        };
        // windows at 0 and 2: [1+2, 3+4] + bias
        assert_eq!(conv(&[vec![1.0, 2.0, 3.0, 4.0]], &p), vec![vec![3.5, 7.5]]);
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let p = ConvLayerParams {
            in_channels: 1,
            out_channels: 1,
            kernel_width: 2,
            stride: 1,
            weights: vec![1.0, -2.0],
            bias: vec![0.3],
        };
        let input = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let mut gw = vec![0.0; 2];
        let mut gb = vec![0.0; 1];
        let gi = conv1d_backward(&input, &p, &Tensor2::zeros(1, 2), &mut gw, &mut gb).unwrap();
        assert!(gw.iter().chain(gb.iter()).all(|&g| g == 0.0));
        assert!(gi.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_hand_derivation() {
        // y_t = w0*x_t + w1*x_{t+1} + b; upstream g = [1, 1].
        // dL/dw0 = x0 + x1, dL/dw1 = x1 + x2, dL/db = 2,
        // dL/dx = [w0, w0 + w1, w1].
        let p = ConvLayerParams {
            in_channels: 1,
            out_channels: 1,
            kernel_width: 2,
            stride: 1,
            weights: vec![2.0, -1.0],
            bias: vec![0.0],
        };
        let input = Tensor2::from_rows(&[vec![1.0, 5.0, 9.0]]).unwrap();
        let upstream = Tensor2::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let mut gw = vec![0.0; 2];
        let mut gb = vec![0.0; 1];
        let gi = conv1d_backward(&input, &p, &upstream, &mut gw, &mut gb).unwrap();
        assert_eq!(gw, vec![6.0, 14.0]);
        assert_eq!(gb, vec![2.0]);
        assert_eq!(gi.channel(0), &[2.0, 1.0, -1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_length_follows_floor_formula(
                len in 1usize..64,
                width in 1usize..8,
                stride in 1usize..4,
            ) {
                prop_assume!(width <= len);
                let p = ConvLayerParams::zeros(1, 1, width, stride);
                let out = conv1d_forward(&Tensor2::zeros(1, len), &p).unwrap();
                prop_assert_eq!(out.length(), (len - width) / stride + 1);
            }
        }
    }
}

//! Per-channel 1-D max pooling.

use crate::error::{Error, Result};
use crate::kernel::tensor::Tensor2;

/// Output length of a pooling window sweep: `floor((len - width) / stride) + 1`.
#[inline]
pub fn maxpool1d_output_length(input_length: usize, width: usize, stride: usize) -> usize {
    (input_length - width) / stride + 1
}

/// Sliding per-channel max.
///
/// Returns the pooled map and, for each output position, the input index
/// (within its channel) that held the maximum; ties keep the leftmost
/// position. The indices drive the backward pass.
pub fn maxpool1d_forward(input: &Tensor2, width: usize, stride: usize) -> Result<(Tensor2, Vec<usize>)> {
    if width == 0 || stride == 0 {
        return Err(Error::Config("pool width and stride must be >= 1".into()));
    }
    if input.length() < width {
        return Err(Error::Config(format!(
            "pool width {width} exceeds input length {}",
            input.length()
        )));
    }
    let out_len = maxpool1d_output_length(input.length(), width, stride);
    let mut out = Tensor2::zeros(input.channels(), out_len);
    let mut argmax = vec![0usize; input.channels() * out_len];
    for c in 0..input.channels() {
        let row = input.channel(c);
        for t in 0..out_len {
            let start = t * stride;
            let mut best = row[start];
            let mut best_idx = start;
            for k in 1..width {
                let v = row[start + k];
                if v > best {
                    best = v;
                    best_idx = start + k;
                }
            }
            *out.at_mut(c, t) = best;
            argmax[c * out_len + t] = best_idx;
        }
    }
    Ok((out, argmax))
}

/// Routes upstream gradient to the positions that won the forward max,
/// accumulating into a zeroed input-shaped buffer.
pub fn maxpool1d_backward(
    input_channels: usize,
    input_length: usize,
    argmax: &[usize],
    upstream: &Tensor2,
) -> Result<Tensor2> {
    let out_len = upstream.length();
    if upstream.channels() != input_channels || argmax.len() != input_channels * out_len {
        return Err(Error::Shape(format!(
            "pool backward: upstream {}x{} with {} argmax entries does not match {} input channels",
            upstream.channels(),
            out_len,
            argmax.len(),
            input_channels
        )));
    }
    let mut grad = Tensor2::zeros(input_channels, input_length);
    for c in 0..input_channels {
        for t in 0..out_len {
            *grad.at_mut(c, argmax[c * out_len + t]) += upstream.at(c, t);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_pairs_with_stride_two() {
        let input = Tensor2::from_rows(&[vec![1.0, 3.0, 2.0, 5.0]]).unwrap();
        let (out, argmax) = maxpool1d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.channel(0), &[3.0, 5.0]);
        assert_eq!(argmax, vec![1, 3]);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let input = Tensor2::from_rows(&[vec![7.5; 4]]).unwrap();
        let (out, _) = maxpool1d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.channel(0), &[7.5, 7.5]);
    }

    #[test]
    fn negative_values_pick_larger() {
        let input = Tensor2::from_rows(&[vec![-1.0, -2.0]]).unwrap();
        let (out, argmax) = maxpool1d_forward(&input, 2, 2).unwrap();
        assert_eq!(out.channel(0), &[-1.0]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn width_exceeding_length_is_config_error() {
        assert!(maxpool1d_forward(&Tensor2::zeros(1, 3), 4, 2).is_err());
    }

    #[test]
    fn ties_keep_leftmost_position() {
        let input = Tensor2::from_rows(&[vec![2.0, 2.0, 1.0]]).unwrap();
        let (_, argmax) = maxpool1d_forward(&input, 3, 1).unwrap();
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn backward_routes_only_to_argmax_positions() {
        let input = Tensor2::from_rows(&[vec![1.0, 3.0, 2.0, 5.0]]).unwrap();
        let (_, argmax) = maxpool1d_forward(&input, 2, 2).unwrap();
        let upstream = Tensor2::from_rows(&[vec![10.0, 20.0]]).unwrap();
        let grad = maxpool1d_backward(1, 4, &argmax, &upstream).unwrap();
        assert_eq!(grad.channel(0), &[0.0, 10.0, 0.0, 20.0]);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        // width 2, stride 1 over [0, 9, 1]: argmax = [1, 1]
        let input = Tensor2::from_rows(&[vec![0.0, 9.0, 1.0]]).unwrap();
        let (_, argmax) = maxpool1d_forward(&input, 2, 1).unwrap();
        let upstream = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let grad = maxpool1d_backward(1, 3, &argmax, &upstream).unwrap();
        assert_eq!(grad.channel(0), &[0.0, 3.0, 0.0]);
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
                let (out, _) = maxpool1d_forward(&Tensor2::zeros(2, len), width, stride).unwrap();
                prop_assert_eq!(out.length(), (len - width) / stride + 1);
            }
        }
    }
}

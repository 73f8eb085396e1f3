//! Exact analytical gradients of the weighted multi-exit loss.
//!
//! One cached staged forward runs through every exit (training always sees
//! the full segment), then gradient flows backward from each exit head into
//! the trunk. At each attachment point the incoming gradient splits between
//! the carried trunk map and the late-input block that was concatenated
//! there; the late part ends at the raw slice (input gradients are
//! discarded), the trunk part keeps descending.

use crate::error::{Error, Result};
use crate::kernel::{
    conv1d_backward, cross_entropy_loss, dense_backward, maxpool1d_backward, relu_backward,
    softmax, softmax_cross_entropy_grad, Tensor2,
};

use super::forward::{ForwardCache, HeadCache, LateCache, StagedForward, TerminalCache};
use super::{slice_segment, SeeCnnModel};

/// Gradient buffer for one conv layer, congruent to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient buffer for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient buffers for one early-exit head.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitGrad {
    pub conv: ConvGrad,
    pub fc1: DenseGrad,
    pub fc2: DenseGrad,
}

/// Gradients for every parameter block, in the model's canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<ConvGrad>,
    pub trunk_fc1: DenseGrad,
    pub trunk_fc2: DenseGrad,
    pub exits: Vec<ExitGrad>,
    pub lates: Vec<ConvGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &SeeCnnModel) -> Self {
        let conv_zero = |c: &crate::kernel::ConvLayerParams| ConvGrad {
            weights: vec![0.0; c.weights.len()],
            bias: vec![0.0; c.bias.len()],
        };
        let dense_zero = |d: &crate::kernel::DenseLayerParams| DenseGrad {
            weights: vec![0.0; d.weights.len()],
            bias: vec![0.0; d.bias.len()],
        };
        Self {
            trunk: model.trunk.iter().map(|s| conv_zero(&s.conv)).collect(),
            trunk_fc1: dense_zero(&model.trunk_fc1),
            trunk_fc2: dense_zero(&model.trunk_fc2),
            exits: model
                .exit_blocks
                .iter()
                .map(|b| ExitGrad {
                    conv: conv_zero(&b.conv),
                    fc1: dense_zero(&b.fc1),
                    fc2: dense_zero(&b.fc2),
                })
                .collect(),
            lates: model.late_blocks.iter().map(|b| conv_zero(&b.conv)).collect(),
        }
    }

    /// Flattens in the model's canonical block order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.trunk {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out.extend_from_slice(&self.trunk_fc1.weights);
        out.extend_from_slice(&self.trunk_fc1.bias);
        out.extend_from_slice(&self.trunk_fc2.weights);
        out.extend_from_slice(&self.trunk_fc2.bias);
        for g in &self.exits {
            out.extend_from_slice(&g.conv.weights);
            out.extend_from_slice(&g.conv.bias);
            out.extend_from_slice(&g.fc1.weights);
            out.extend_from_slice(&g.fc1.bias);
            out.extend_from_slice(&g.fc2.weights);
            out.extend_from_slice(&g.fc2.bias);
        }
        for g in &self.lates {
            out.extend_from_slice(&g.weights);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        let apply = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        for g in &mut self.trunk {
            apply(&mut g.weights);
            apply(&mut g.bias);
        }
        apply(&mut self.trunk_fc1.weights);
        apply(&mut self.trunk_fc1.bias);
        apply(&mut self.trunk_fc2.weights);
        apply(&mut self.trunk_fc2.bias);
        for g in &mut self.exits {
            apply(&mut g.conv.weights);
            apply(&mut g.conv.bias);
            apply(&mut g.fc1.weights);
            apply(&mut g.fc1.bias);
            apply(&mut g.fc2.weights);
            apply(&mut g.fc2.bias);
        }
        for g in &mut self.lates {
            apply(&mut g.weights);
            apply(&mut g.bias);
        }
    }
}

/// Per-exit loss terms and predictions for one training sample.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    /// Unweighted cross-entropy per exit.
    pub per_exit_loss: Vec<f64>,
    /// Weighted total: `sum_n lambda_n * loss_n`.
    pub total: f64,
    /// Argmax prediction per exit.
    pub per_exit_prediction: Vec<usize>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn relu_mask_vec(forward_in: &[f64], upstream: &[f64]) -> Vec<f64> {
    forward_in
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

fn tensor_add_assign(dst: &mut Tensor2, src: &Tensor2) {
    debug_assert_eq!(dst.channels(), src.channels());
    debug_assert_eq!(dst.length(), src.length());
    for (d, s) in dst.values_mut().iter_mut().zip(src.values()) {
        *d += s;
    }
}

/// Backward through an early-exit head; adds the head's contribution to the
/// gradient at its attachment map.
fn backward_exit_head(
    model: &SeeCnnModel,
    exit_index: usize,
    head: &HeadCache,
    map: &Tensor2,
    dlogits: &[f64],
    grads: &mut Gradients,
    grad_at_map: &mut Tensor2,
) -> Result<()> {
    let block = &model.exit_blocks[exit_index];
    let g = &mut grads.exits[exit_index];

    let d_fc1_relu = dense_backward(&head.fc1_relu, &block.fc2, dlogits, &mut g.fc2.weights, &mut g.fc2.bias)?;
    let d_fc1_out = relu_mask_vec(&head.fc1_out, &d_fc1_relu);
    let d_flat = dense_backward(&head.flat, &block.fc1, &d_fc1_out, &mut g.fc1.weights, &mut g.fc1.bias)?;

    // flat is relu(pool_out) flattened; unflatten and mask.
    let d_activated = Tensor2::new(head.pool_out.channels(), head.pool_out.length(), d_flat)?;
    let d_pool_out = relu_backward(&head.pool_out, &d_activated)?;
    let d_conv_out = maxpool1d_backward(
        head.conv_out.channels(),
        head.conv_out.length(),
        &head.argmax,
        &d_pool_out,
    )?;
    let d_map = conv1d_backward(map, &block.conv, &d_conv_out, &mut g.conv.weights, &mut g.conv.bias)?;
    tensor_add_assign(grad_at_map, &d_map);
    Ok(())
}

/// Backward through the terminal dense head.
fn backward_terminal_head(
    model: &SeeCnnModel,
    terminal: &TerminalCache,
    map_shape: (usize, usize),
    dlogits: &[f64],
    grads: &mut Gradients,
    grad_at_map: &mut Tensor2,
) -> Result<()> {
    let d_fc1_relu = dense_backward(
        &terminal.fc1_relu,
        &model.trunk_fc2,
        dlogits,
        &mut grads.trunk_fc2.weights,
        &mut grads.trunk_fc2.bias,
    )?;
    let d_fc1_out = relu_mask_vec(&terminal.fc1_out, &d_fc1_relu);
    let d_flat = dense_backward(
        &terminal.flat,
        &model.trunk_fc1,
        &d_fc1_out,
        &mut grads.trunk_fc1.weights,
        &mut grads.trunk_fc1.bias,
    )?;
    let d_map = Tensor2::new(map_shape.0, map_shape.1, d_flat)?;
    tensor_add_assign(grad_at_map, &d_map);
    Ok(())
}

/// Backward through a late-input block down to its raw slice (discarded).
fn backward_late_block(
    model: &SeeCnnModel,
    late_index: usize,
    late: &LateCache,
    upstream: &Tensor2,
    grads: &mut Gradients,
) -> Result<()> {
    let block = &model.late_blocks[late_index];
    let g = &mut grads.lates[late_index];
    let d_pool_out = relu_backward(&late.pool_out, upstream)?;
    let d_conv_out = maxpool1d_backward(late.conv_out.channels(), late.conv_out.length(), &late.argmax, &d_pool_out)?;
    conv1d_backward(&late.conv_in, &block.conv, &d_conv_out, &mut g.weights, &mut g.bias)?;
    Ok(())
}

/// Computes the weighted multi-exit loss for one labelled segment and
/// accumulates its exact gradients into `grads`.
///
/// `loss_weights` must carry one positive weight per exit.
pub fn loss_and_gradients(
    model: &SeeCnnModel,
    segment: &Tensor2,
    label: usize,
    loss_weights: &[f64],
    grads: &mut Gradients,
) -> Result<SampleLoss> {
    let num_exits = model.num_exits();
    if loss_weights.len() != num_exits {
        return Err(Error::Config(format!(
            "{} loss weights for {num_exits} exits",
            loss_weights.len()
        )));
    }
    if label >= model.spec().num_classes {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            model.spec().num_classes
        )));
    }

    // Forward through all exits with caches.
    let slices = slice_segment(model, segment)?;
    let mut run = StagedForward::with_cache(model);
    for slice in &slices {
        run.advance(slice)?;
    }
    let cache: ForwardCache = run.into_cache().expect("cache requested");

    // Head backward passes seed the gradient at each attachment map.
    let mut per_exit_loss = Vec::with_capacity(num_exits);
    let mut per_exit_prediction = Vec::with_capacity(num_exits);
    let mut total = 0.0;
    let mut grad_at_map: Vec<Tensor2> = cache
        .maps
        .iter()
        .map(|m| Tensor2::zeros(m.channels(), m.length()))
        .collect();

    for n in 0..num_exits {
        let logits = if n == num_exits - 1 {
            &cache.terminal.as_ref().expect("terminal cache").logits
        } else {
            &cache.heads[n].logits
        };
        let probs = softmax(logits);
        let loss = cross_entropy_loss(label, &probs)?;
        per_exit_loss.push(loss);
        per_exit_prediction.push(argmax(&probs));
        total += loss_weights[n] * loss;

        let mut dlogits = softmax_cross_entropy_grad(label, &probs);
        for d in &mut dlogits {
            *d *= loss_weights[n];
        }

        if n == num_exits - 1 {
            let map = &cache.maps[n];
            backward_terminal_head(
                model,
                cache.terminal.as_ref().expect("terminal cache"),
                (map.channels(), map.length()),
                &dlogits,
                grads,
                &mut grad_at_map[n],
            )?;
        } else {
            backward_exit_head(model, n, &cache.heads[n], &cache.maps[n], &dlogits, grads, &mut grad_at_map[n])?;
        }
    }

    // Trunk backward, deepest stage first.
    for n in (0..num_exits).rev() {
        let mut g = grad_at_map[n].clone();
        let (start, end) = model.plan().stage_layers[n];
        for layer in (start..end).rev() {
            let lc = &cache.stages[n][layer - start];
            let stage = &model.trunk[layer];
            let d_pool_out = relu_backward(&lc.pool_out, &g)?;
            let d_conv_out = maxpool1d_backward(lc.conv_out.channels(), lc.conv_out.length(), &lc.argmax, &d_pool_out)?;
            let tg = &mut grads.trunk[layer];
            g = conv1d_backward(&lc.conv_in, &stage.conv, &d_conv_out, &mut tg.weights, &mut tg.bias)?;
        }
        if n > 0 {
            // Stage input was concat(previous map, late output): split.
            let trunk_len = model.plan().map_len_at_attach[n - 1];
            let g_trunk = g.slice_time(0, trunk_len)?;
            let g_late = g.slice_time(trunk_len, g.length())?;
            backward_late_block(model, n - 1, &cache.lates[n - 1], &g_late, grads)?;
            tensor_add_assign(&mut grad_at_map[n - 1], &g_trunk);
        }
    }

    Ok(SampleLoss {
        per_exit_loss,
        total,
        per_exit_prediction,
    })
}

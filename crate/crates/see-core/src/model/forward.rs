//! Staged forward execution.
//!
//! A [`StagedForward`] consumes raw data slices one exit at a time and
//! never recomputes trunk work: the feature map at the last attachment is
//! carried forward, each new slice is adapted by its late-input block and
//! temporally concatenated onto that map, and the next stage of trunk
//! layers runs on the result. Exit-by-exit execution is therefore the
//! same code path as a full forward pass, which makes the two bit-identical.

use crate::error::{Error, Result};
use crate::kernel::{
    conv1d_forward, dense_forward, maxpool1d_forward, relu_forward, Tensor2,
};

use super::{EarlyExitBlock, LateInputBlock, SeeCnnModel, TrunkStage};

/// Caches for one trunk layer (conv -> pool -> ReLU).
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub conv_in: Tensor2,
    pub conv_out: Tensor2,
    pub argmax: Vec<usize>,
    pub pool_out: Tensor2,
}

/// Caches for one early-exit head.
#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    pub conv_out: Tensor2,
    pub argmax: Vec<usize>,
    pub pool_out: Tensor2,
    pub flat: Vec<f64>,
    pub fc1_out: Vec<f64>,
    pub fc1_relu: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Caches for one late-input block.
#[derive(Debug, Clone)]
pub(crate) struct LateCache {
    pub conv_in: Tensor2,
    pub conv_out: Tensor2,
    pub argmax: Vec<usize>,
    pub pool_out: Tensor2,
}

/// Caches for the terminal dense head.
#[derive(Debug, Clone)]
pub(crate) struct TerminalCache {
    pub flat: Vec<f64>,
    pub fc1_out: Vec<f64>,
    pub fc1_relu: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Every intermediate activation of a full staged forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    /// Per exit: trunk layer caches of its stage.
    pub stages: Vec<Vec<LayerCache>>,
    /// Per exit: attachment feature map.
    pub maps: Vec<Tensor2>,
    pub heads: Vec<HeadCache>,
    pub lates: Vec<LateCache>,
    pub terminal: Option<TerminalCache>,
}

impl ForwardCache {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            maps: Vec::new(),
            heads: Vec::new(),
            lates: Vec::new(),
            terminal: None,
        }
    }
}

fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

fn run_trunk_layer(stage: &TrunkStage, input: Tensor2, cache: &mut Option<&mut Vec<LayerCache>>) -> Result<Tensor2> {
    let conv_out = conv1d_forward(&input, &stage.conv)?;
    let (pool_out, argmax) = maxpool1d_forward(&conv_out, stage.pool_width, stage.pool_stride)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = relu_forward(&pool_out);
    if let Some(cache) = cache.as_deref_mut() {
        cache.push(LayerCache {
            conv_in: input,
            conv_out,
            argmax,
            pool_out,
        });
    }
    Ok(out)
}

fn run_exit_head(block: &EarlyExitBlock, map: &Tensor2) -> Result<(Vec<f64>, HeadCache)> {
    let conv_out = conv1d_forward(map, &block.conv)?;
    let (pool_out, argmax) = maxpool1d_forward(&conv_out, block.pool_width, block.pool_stride)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let activated = relu_forward(&pool_out);
    let flat = activated.values().to_vec();
    let fc1_out = dense_forward(&flat, &block.fc1)?;
    let fc1_relu = relu_vec(&fc1_out);
    let logits = dense_forward(&fc1_relu, &block.fc2)?;
    Ok((
        logits.clone(),
        HeadCache {
            conv_out,
            argmax,
            pool_out,
            flat,
            fc1_out,
            fc1_relu,
            logits,
        },
    ))
}

fn run_late_block(block: &LateInputBlock, slice: &Tensor2) -> Result<(Tensor2, LateCache)> {
    let conv_out = conv1d_forward(slice, &block.conv)?;
    let (pool_out, argmax) = maxpool1d_forward(&conv_out, block.pool_width, block.pool_stride)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = relu_forward(&pool_out);
    Ok((
        out,
        LateCache {
            conv_in: slice.clone(),
            conv_out,
            argmax,
            pool_out,
        },
    ))
}

fn run_terminal_head(model: &SeeCnnModel, map: &Tensor2) -> Result<(Vec<f64>, TerminalCache)> {
    let flat = map.values().to_vec();
    let fc1_out = dense_forward(&flat, &model.trunk_fc1)?;
    let fc1_relu = relu_vec(&fc1_out);
    let logits = dense_forward(&fc1_relu, &model.trunk_fc2)?;
    Ok((
        logits.clone(),
        TerminalCache {
            flat,
            fc1_out,
            fc1_relu,
            logits,
        },
    ))
}

/// Incremental executor over a model's exits.
pub struct StagedForward<'m> {
    model: &'m SeeCnnModel,
    next_exit: usize,
    map: Option<Tensor2>,
    cache: Option<ForwardCache>,
}

impl<'m> StagedForward<'m> {
    pub fn new(model: &'m SeeCnnModel) -> Self {
        Self {
            model,
            next_exit: 0,
            map: None,
            cache: None,
        }
    }

    pub(crate) fn with_cache(model: &'m SeeCnnModel) -> Self {
        Self {
            model,
            next_exit: 0,
            map: None,
            cache: Some(ForwardCache::new()),
        }
    }

    /// Index of the exit the next [`advance`](Self::advance) will evaluate.
    pub fn next_exit(&self) -> usize {
        self.next_exit
    }

    /// Feeds the next raw data slice and returns the logits of the next exit.
    pub fn advance(&mut self, slice: &Tensor2) -> Result<Vec<f64>> {
        let model = self.model;
        let plan = model.plan();
        let n = self.next_exit;
        let num_exits = model.num_exits();
        if n >= num_exits {
            return Err(Error::Usage(format!(
                "all {num_exits} exits already evaluated for this segment"
            )));
        }
        if slice.channels() != model.spec().channels {
            return Err(Error::Shape(format!(
                "slice has {} channels, model expects {}",
                slice.channels(),
                model.spec().channels
            )));
        }
        let expected_len = plan.slice_len(n);
        if slice.length() != expected_len {
            return Err(Error::Shape(format!(
                "slice for exit {} has length {}, spec requires {expected_len}",
                n + 1,
                slice.length()
            )));
        }

        // Build the stage input: the raw first slice, or the carried map
        // plus the late-input view of the new slice.
        let stage_input = if n == 0 {
            slice.clone()
        } else {
            let (late_out, late_cache) = run_late_block(&model.late_blocks[n - 1], slice)?;
            if let Some(cache) = &mut self.cache {
                cache.lates.push(late_cache);
            }
            let map = self.map.take().expect("map carried from previous exit");
            map.concat_time(&late_out)?
        };

        let mut stage_cache_store = Vec::new();
        let mut stage_cache = self.cache.as_ref().map(|_| &mut stage_cache_store);
        let (start, end) = plan.stage_layers[n];
        let mut map = stage_input;
        for layer in start..end {
            map = run_trunk_layer(&model.trunk[layer], map, &mut stage_cache)?;
        }

        let logits = if n == num_exits - 1 {
            let (logits, terminal_cache) = run_terminal_head(model, &map)?;
            if let Some(cache) = &mut self.cache {
                cache.terminal = Some(terminal_cache);
            }
            logits
        } else {
            let (logits, head_cache) = run_exit_head(&model.exit_blocks[n], &map)?;
            if let Some(cache) = &mut self.cache {
                cache.heads.push(head_cache);
            }
            logits
        };

        if let Some(cache) = &mut self.cache {
            cache.stages.push(stage_cache_store);
            cache.maps.push(map.clone());
        }
        self.map = Some(map);
        self.next_exit += 1;
        Ok(logits)
    }

    pub(crate) fn into_cache(self) -> Option<ForwardCache> {
        self.cache
    }
}

/// Cuts a full segment into the per-exit slices the plan prescribes.
pub fn slice_segment(model: &SeeCnnModel, segment: &Tensor2) -> Result<Vec<Tensor2>> {
    if segment.length() != model.spec().segment_length {
        return Err(Error::Shape(format!(
            "segment length {} does not match spec length {}",
            segment.length(),
            model.spec().segment_length
        )));
    }
    (0..model.num_exits())
        .map(|n| {
            let (start, end) = model.plan().slice_bounds(n);
            segment.slice_time(start, end)
        })
        .collect()
}

/// Runs the staged network up to exit `exit_index` (0-based) and returns
/// that exit's logits. `partial_inputs[k]` must hold the k-th raw slice.
pub fn forward_to_exit(model: &SeeCnnModel, partial_inputs: &[Tensor2], exit_index: usize) -> Result<Vec<f64>> {
    if exit_index >= model.num_exits() {
        return Err(Error::Usage(format!(
            "exit index {exit_index} out of range for {} exits",
            model.num_exits()
        )));
    }
    if partial_inputs.len() <= exit_index {
        return Err(Error::Usage(format!(
            "exit {} needs {} slices, got {}",
            exit_index + 1,
            exit_index + 1,
            partial_inputs.len()
        )));
    }
    let mut run = StagedForward::new(model);
    let mut logits = Vec::new();
    for slice in &partial_inputs[..=exit_index] {
        logits = run.advance(slice)?;
    }
    Ok(logits)
}

/// Evaluates every exit on a full segment: one logits vector per exit.
pub fn forward_all_exits(model: &SeeCnnModel, segment: &Tensor2) -> Result<Vec<Vec<f64>>> {
    let slices = slice_segment(model, segment)?;
    let mut run = StagedForward::new(model);
    slices.iter().map(|s| run.advance(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_model(early: &[(usize, f64)], seed: u64) -> SeeCnnModel {
        let spec = ArchitectureSpec::default_for(4, 128, 6).with_early_exits(early);
        SeeCnnModel::assemble(spec, seed).unwrap()
    }

    fn random_segment(channels: usize, length: usize, seed: u64) -> Tensor2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..channels * length).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2::new(channels, length, values).unwrap()
    }

    #[test]
    fn logits_have_class_dimension_at_every_exit() {
        let model = test_model(&[(1, 0.4), (2, 0.7)], 11);
        let segment = random_segment(4, 128, 1);
        let all = forward_all_exits(&model, &segment).unwrap();
        assert_eq!(all.len(), 3);
        for logits in &all {
            assert_eq!(logits.len(), 6);
        }
    }

    #[test]
    fn terminal_only_model_yields_single_logits_vector() {
        let model = test_model(&[], 11);
        let segment = random_segment(4, 128, 2);
        let all = forward_all_exits(&model, &segment).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].len(), 6);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        let mut model = test_model(&[(1, 0.4), (2, 0.7)], 11);
        // Zero all biases; weights stay random.
        for stage in &mut model.trunk {
            stage.conv.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        model.trunk_fc1.bias.iter_mut().for_each(|b| *b = 0.0);
        model.trunk_fc2.bias.iter_mut().for_each(|b| *b = 0.0);
        for b in &mut model.exit_blocks {
            b.conv.bias.iter_mut().for_each(|x| *x = 0.0);
            b.fc1.bias.iter_mut().for_each(|x| *x = 0.0);
            b.fc2.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        for b in &mut model.late_blocks {
            b.conv.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        let segment = Tensor2::zeros(4, 128);
        for logits in forward_all_exits(&model, &segment).unwrap() {
            assert!(logits.iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn staged_execution_is_bit_identical_to_full_forward() {
        for seed in 0..5 {
            let model = test_model(&[(1, 0.4), (2, 0.7)], seed);
            let segment = random_segment(4, 128, 100 + seed);
            let slices = slice_segment(&model, &segment).unwrap();

            let full = forward_all_exits(&model, &segment).unwrap();
            for n in 0..3 {
                let staged = forward_to_exit(&model, &slices, n).unwrap();
                assert_eq!(staged, full[n], "exit {n} differs from full forward");
            }
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let model = test_model(&[(2, 0.5)], 9);
        let segment = random_segment(4, 128, 9);
        let a = forward_all_exits(&model, &segment).unwrap();
        let b = forward_all_exits(&model, &segment).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_slice_is_usage_error() {
        let model = test_model(&[(1, 0.4)], 0);
        let segment = random_segment(4, 128, 0);
        let slices = slice_segment(&model, &segment).unwrap();
        let err = forward_to_exit(&model, &slices[..1], 1).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn wrong_slice_length_is_shape_error() {
        let model = test_model(&[(1, 0.4)], 0);
        let mut run = StagedForward::new(&model);
        let err = run.advance(&Tensor2::zeros(4, 50)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn concatenated_length_matches_plan_arithmetic() {
        let model = test_model(&[(1, 0.4), (2, 0.7)], 4);
        let plan = model.plan();
        // After the exit-1 attachment, the stage-2 input is trunk map +
        // late-block output.
        let segment = random_segment(4, 128, 5);
        let slices = slice_segment(&model, &segment).unwrap();
        let mut run = StagedForward::with_cache(&model);
        for s in &slices {
            run.advance(s).unwrap();
        }
        let cache = run.into_cache().unwrap();
        let stage2_input = &cache.stages[1][0].conv_in;
        assert_eq!(
            stage2_input.length(),
            plan.map_len_at_attach[0] + plan.late_out_len[0]
        );
    }

    #[test]
    fn exitless_model_equals_hand_run_plain_pipeline() {
        // With all early exits removed the staged executor must reduce to
        // a plain conv-pool-relu chain plus the dense head, run here
        // directly on the kernel functions as an independent path.
        let see = test_model(&[(1, 0.4), (2, 0.7)], 21);
        let baseline = {
            let spec = ArchitectureSpec::default_for(4, 128, 6);
            let mut m = SeeCnnModel::assemble(spec, 0).unwrap();
            m.trunk = see.trunk.clone();
            m.trunk_fc1 = see.trunk_fc1.clone();
            m.trunk_fc2 = see.trunk_fc2.clone();
            m
        };
        let segment = random_segment(4, 128, 22);

        let mut map = segment.clone();
        for stage in &baseline.trunk {
            let conv = conv1d_forward(&map, &stage.conv).unwrap();
            let (pooled, _) = maxpool1d_forward(&conv, stage.pool_width, stage.pool_stride).unwrap();
            map = relu_forward(&pooled);
        }
        let fc1 = dense_forward(map.values(), &baseline.trunk_fc1).unwrap();
        let hidden = relu_vec(&fc1);
        let expected = dense_forward(&hidden, &baseline.trunk_fc2).unwrap();

        let got = forward_all_exits(&baseline, &segment).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0], expected);
    }
}

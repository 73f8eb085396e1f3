//! The SEE CNN: base trunk, early-exit heads, late-input blocks, and
//! staged forward execution over partial window data.

mod backprop;
mod forward;
mod io;
mod spec;

pub use backprop::{loss_and_gradients, ConvGrad, DenseGrad, Gradients, SampleLoss};
pub use forward::{forward_all_exits, forward_to_exit, slice_segment, StagedForward};
pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use spec::{
    default_loss_weights, plan_shapes, ArchitectureSpec, ConvStageConfig, ExitHeadConfig, ExitSpec,
    LateInputConfig, ShapePlan,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ConvLayerParams, DenseLayerParams};

/// One trunk stage's parameters plus its pooling configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkStage {
    pub conv: ConvLayerParams,
    pub pool_width: usize,
    pub pool_stride: usize,
}

/// Early-exit head parameters: conv -> pool -> ReLU -> fc -> ReLU -> fc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyExitBlock {
    pub conv: ConvLayerParams,
    pub pool_width: usize,
    pub pool_stride: usize,
    pub fc1: DenseLayerParams,
    pub fc2: DenseLayerParams,
}

/// Late-input adapter parameters: conv -> pool -> ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateInputBlock {
    pub conv: ConvLayerParams,
    pub pool_width: usize,
    pub pool_stride: usize,
}

/// A fully-assembled SEE CNN: the architecture plus every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct SeeCnnModel {
    spec: ArchitectureSpec,
    plan: ShapePlan,
    pub(crate) trunk: Vec<TrunkStage>,
    pub(crate) trunk_fc1: DenseLayerParams,
    pub(crate) trunk_fc2: DenseLayerParams,
    pub(crate) exit_blocks: Vec<EarlyExitBlock>,
    pub(crate) late_blocks: Vec<LateInputBlock>,
}

fn init_uniform(rng: &mut ChaCha8Rng, fan_in: usize, values: &mut [f64]) {
    let limit = (1.0 / fan_in as f64).sqrt();
    for v in values.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

fn init_conv(rng: &mut ChaCha8Rng, conv: &mut ConvLayerParams) {
    let fan_in = conv.in_channels * conv.kernel_width;
    init_uniform(rng, fan_in, &mut conv.weights);
    init_uniform(rng, fan_in, &mut conv.bias);
}

fn init_dense(rng: &mut ChaCha8Rng, dense: &mut DenseLayerParams) {
    init_uniform(rng, dense.in_dim, &mut dense.weights);
    init_uniform(rng, dense.in_dim, &mut dense.bias);
}

impl SeeCnnModel {
    /// Builds a model with all shapes statically resolved and parameters
    /// drawn from `uniform(-sqrt(1/fan_in), sqrt(1/fan_in))`, seeded.
    ///
    /// Draw order is fixed (trunk stages, terminal fc layers, exit blocks,
    /// late blocks) so a given `(spec, seed)` is bit-reproducible.
    pub fn assemble(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let plan = plan_shapes(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut trunk = Vec::with_capacity(spec.trunk.len());
        let mut in_channels = spec.channels;
        for stage in &spec.trunk {
            let mut conv = ConvLayerParams::zeros(in_channels, stage.out_channels, stage.kernel_width, stage.stride);
            init_conv(&mut rng, &mut conv);
            trunk.push(TrunkStage {
                conv,
                pool_width: stage.pool_width,
                pool_stride: stage.pool_stride,
            });
            in_channels = stage.out_channels;
        }

        let mut trunk_fc1 = DenseLayerParams::zeros(plan.terminal_flat_dim, spec.fc_dims[0]);
        init_dense(&mut rng, &mut trunk_fc1);
        let mut trunk_fc2 = DenseLayerParams::zeros(spec.fc_dims[0], spec.fc_dims[1]);
        init_dense(&mut rng, &mut trunk_fc2);

        let mut exit_blocks = Vec::with_capacity(spec.num_early_exits());
        for n in 0..spec.num_early_exits() {
            let head = &spec.exit_head;
            let mut conv = ConvLayerParams::zeros(plan.map_channels_at_attach[n], head.conv_filters, head.conv_width, 1);
            init_conv(&mut rng, &mut conv);
            let mut fc1 = DenseLayerParams::zeros(plan.exit_flat_dim[n], head.hidden_dim);
            init_dense(&mut rng, &mut fc1);
            let mut fc2 = DenseLayerParams::zeros(head.hidden_dim, spec.num_classes);
            init_dense(&mut rng, &mut fc2);
            exit_blocks.push(EarlyExitBlock {
                conv,
                pool_width: head.pool_width,
                pool_stride: head.pool_stride,
                fc1,
                fc2,
            });
        }

        let mut late_blocks = Vec::with_capacity(spec.num_early_exits());
        for n in 0..spec.num_early_exits() {
            let mut conv = ConvLayerParams::zeros(
                spec.channels,
                plan.map_channels_at_attach[n],
                spec.late_input.kernel_width,
                1,
            );
            init_conv(&mut rng, &mut conv);
            late_blocks.push(LateInputBlock {
                conv,
                pool_width: plan.late_pool[n],
                pool_stride: plan.late_pool[n],
            });
        }

        Ok(Self {
            spec,
            plan,
            trunk,
            trunk_fc1,
            trunk_fc2,
            exit_blocks,
            late_blocks,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn num_exits(&self) -> usize {
        self.spec.num_exits()
    }

    /// Exact count of scalar parameters across all blocks.
    pub fn parameter_count(&self) -> usize {
        let trunk: usize = self.trunk.iter().map(|s| s.conv.parameter_count()).sum();
        let heads: usize = self
            .exit_blocks
            .iter()
            .map(|b| b.conv.parameter_count() + b.fc1.parameter_count() + b.fc2.parameter_count())
            .sum();
        let lates: usize = self.late_blocks.iter().map(|b| b.conv.parameter_count()).sum();
        trunk + self.trunk_fc1.parameter_count() + self.trunk_fc2.parameter_count() + heads + lates
    }

    /// Parameters of the plain baseline CNN embedded in this model
    /// (trunk convs plus the terminal dense layers).
    pub fn baseline_parameter_count(&self) -> usize {
        let trunk: usize = self.trunk.iter().map(|s| s.conv.parameter_count()).sum();
        trunk + self.trunk_fc1.parameter_count() + self.trunk_fc2.parameter_count()
    }

    /// Storage footprint at 64-bit scalars: `count * 8 / 1024` KB.
    pub fn memory_kb(&self) -> f64 {
        self.parameter_count() as f64 * 8.0 / 1024.0
    }

    pub fn baseline_memory_kb(&self) -> f64 {
        self.baseline_parameter_count() as f64 * 8.0 / 1024.0
    }

    /// Cumulative multiply-accumulates spent by the time each exit's
    /// logits exist; the compute-overhead proxy for reports.
    pub fn ops_per_exit(&self) -> &[u64] {
        &self.plan.macs_per_exit
    }

    /// Canonical parameter-block layout as `(name, length)` pairs, in the
    /// same order [`params_flat`](Self::params_flat) uses.
    pub fn block_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, stage) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.conv{}.weights", i + 1), stage.conv.weights.len()));
            out.push((format!("trunk.conv{}.bias", i + 1), stage.conv.bias.len()));
        }
        out.push(("trunk.fc1.weights".into(), self.trunk_fc1.weights.len()));
        out.push(("trunk.fc1.bias".into(), self.trunk_fc1.bias.len()));
        out.push(("trunk.fc2.weights".into(), self.trunk_fc2.weights.len()));
        out.push(("trunk.fc2.bias".into(), self.trunk_fc2.bias.len()));
        for (i, b) in self.exit_blocks.iter().enumerate() {
            out.push((format!("exit{}.conv.weights", i + 1), b.conv.weights.len()));
            out.push((format!("exit{}.conv.bias", i + 1), b.conv.bias.len()));
            out.push((format!("exit{}.fc1.weights", i + 1), b.fc1.weights.len()));
            out.push((format!("exit{}.fc1.bias", i + 1), b.fc1.bias.len()));
            out.push((format!("exit{}.fc2.weights", i + 1), b.fc2.weights.len()));
            out.push((format!("exit{}.fc2.bias", i + 1), b.fc2.bias.len()));
        }
        for (i, b) in self.late_blocks.iter().enumerate() {
            out.push((format!("late{}.conv.weights", i + 1), b.conv.weights.len()));
            out.push((format!("late{}.conv.bias", i + 1), b.conv.bias.len()));
        }
        out
    }

    fn for_each_block<'a>(&'a self, f: &mut impl FnMut(&'a [f64])) {
        for stage in &self.trunk {
            f(&stage.conv.weights);
            f(&stage.conv.bias);
        }
        f(&self.trunk_fc1.weights);
        f(&self.trunk_fc1.bias);
        f(&self.trunk_fc2.weights);
        f(&self.trunk_fc2.bias);
        for b in &self.exit_blocks {
            f(&b.conv.weights);
            f(&b.conv.bias);
            f(&b.fc1.weights);
            f(&b.fc1.bias);
            f(&b.fc2.weights);
            f(&b.fc2.bias);
        }
        for b in &self.late_blocks {
            f(&b.conv.weights);
            f(&b.conv.bias);
        }
    }

    fn for_each_block_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for stage in &mut self.trunk {
            f(&mut stage.conv.weights);
            f(&mut stage.conv.bias);
        }
        f(&mut self.trunk_fc1.weights);
        f(&mut self.trunk_fc1.bias);
        f(&mut self.trunk_fc2.weights);
        f(&mut self.trunk_fc2.bias);
        for b in &mut self.exit_blocks {
            f(&mut b.conv.weights);
            f(&mut b.conv.bias);
            f(&mut b.fc1.weights);
            f(&mut b.fc1.bias);
            f(&mut b.fc2.weights);
            f(&mut b.fc2.bias);
        }
        for b in &mut self.late_blocks {
            f(&mut b.conv.weights);
            f(&mut b.conv.bias);
        }
    }

    /// All parameters flattened in canonical block order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        self.for_each_block(&mut |block| flat.extend_from_slice(block));
        flat
    }

    /// Writes a flat vector (in canonical block order) back into the model.
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} values, model holds {}",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut offset = 0;
        self.for_each_block_mut(&mut |block| {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        });
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_block(&mut |block| {
            if block.iter().any(|v| !v.is_finite()) {
                ok = false;
            }
        });
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_has_no_exit_or_late_blocks() {
        let spec = ArchitectureSpec::default_for(4, 128, 6);
        let model = SeeCnnModel::assemble(spec, 7).unwrap();
        assert!(model.exit_blocks.is_empty());
        assert!(model.late_blocks.is_empty());
        assert_eq!(model.parameter_count(), model.baseline_parameter_count());
    }

    #[test]
    fn see_model_is_superset_of_its_baseline() {
        let spec = ArchitectureSpec::default_for(4, 128, 6).with_early_exits(&[(1, 0.4), (2, 0.7)]);
        let model = SeeCnnModel::assemble(spec, 7).unwrap();
        assert!(model.parameter_count() > model.baseline_parameter_count());
    }

    #[test]
    fn single_dense_layer_parameter_arithmetic() {
        let dense = DenseLayerParams::zeros(2, 3);
        assert_eq!(dense.parameter_count(), 9);
    }

    #[test]
    fn memory_kb_is_count_times_eight_over_1024() {
        let spec = ArchitectureSpec::default_for(2, 128, 3);
        let model = SeeCnnModel::assemble(spec, 0).unwrap();
        let count = model.parameter_count();
        assert_eq!(model.memory_kb(), count as f64 * 8.0 / 1024.0);
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let spec = ArchitectureSpec::default_for(4, 128, 6).with_early_exits(&[(2, 0.5)]);
        let a = SeeCnnModel::assemble(spec.clone(), 42).unwrap();
        let b = SeeCnnModel::assemble(spec, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn params_flat_round_trips() {
        let spec = ArchitectureSpec::default_for(4, 128, 6).with_early_exits(&[(2, 0.5)]);
        let model = SeeCnnModel::assemble(spec, 3).unwrap();
        let flat = model.params_flat();
        assert_eq!(flat.len(), model.parameter_count());
        let mut copy = model.clone();
        copy.set_params_flat(&flat).unwrap();
        assert_eq!(copy, model);

        let layout_total: usize = model.block_layout().iter().map(|(_, l)| l).sum();
        assert_eq!(layout_total, flat.len());
    }

    #[test]
    fn infeasible_exit_head_is_rejected_at_assemble() {
        // Exit after layer 4 at fraction 0.7 leaves a length-2 map, too
        // short for the width-3 head conv.
        let spec = ArchitectureSpec::default_for(4, 128, 6).with_early_exits(&[(4, 0.7)]);
        let err = SeeCnnModel::assemble(spec, 0).unwrap_err();
        assert!(err.to_string().contains("exit 1 head"), "{err}");
    }
}

//! Architecture description and static shape planning.
//!
//! Data fractions and exit placements are fixed at design time, so every
//! feature-map length in the staged network is computed once here. A spec
//! that produces any map shorter than a kernel is rejected with the
//! offending layer named.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One trunk stage: conv -> max pool -> ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStageConfig {
    pub out_channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
}

/// Per-exit configuration.
///
/// Exits are ordered; the final entry is the terminal exit (fraction 1.0,
/// no threshold, attached after the last trunk layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSpec {
    /// 1-based trunk layer after which this exit is attached.
    pub attach_after_layer: usize,
    /// Cumulative fraction of the segment available at this exit.
    pub cumulative_data_fraction: f64,
    /// Entropy gate; `None` on the terminal exit, which always returns.
    pub entropy_threshold: Option<f64>,
    /// Training loss weight for this exit.
    pub loss_weight: f64,
}

/// Early-exit head: one conv filter bank, max pool, ReLU, two dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitHeadConfig {
    pub conv_filters: usize,
    pub conv_width: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
    pub hidden_dim: usize,
}

impl Default for ExitHeadConfig {
    fn default() -> Self {
        Self {
            conv_filters: 8,
            conv_width: 3,
            pool_width: 2,
            pool_stride: 2,
            hidden_dim: 32,
        }
    }
}

/// Late-input adapter: one conv (raw channels to trunk channels), one max
/// pool whose granularity is derived from the attachment depth, one ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateInputConfig {
    pub kernel_width: usize,
}

impl Default for LateInputConfig {
    fn default() -> Self {
        Self { kernel_width: 5 }
    }
}

/// The full layer graph: trunk stages, dense head sizes, and exit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub channels: usize,
    pub segment_length: usize,
    pub num_classes: usize,
    pub trunk: Vec<ConvStageConfig>,
    /// Sizes of the two fully-connected layers of the terminal head;
    /// `fc_dims[1]` must equal `num_classes`.
    pub fc_dims: [usize; 2],
    pub exit_head: ExitHeadConfig,
    pub late_input: LateInputConfig,
    pub exits: Vec<ExitSpec>,
}

impl ArchitectureSpec {
    /// Baseline architecture: five conv stages, two dense layers, terminal
    /// exit only. Kernel widths shrink in later stages so the default stays
    /// shape-valid down to short windows.
    pub fn default_for(channels: usize, segment_length: usize, num_classes: usize) -> Self {
        let chans = [8, 16, 16, 32, 32];
        let widths = [5, 5, 3, 3, 3];
        let trunk = chans
            .iter()
            .zip(widths)
            .map(|(&out_channels, kernel_width)| ConvStageConfig {
                out_channels,
                kernel_width,
                stride: 1,
                pool_width: 2,
                pool_stride: 2,
            })
            .collect();
        Self {
            channels,
            segment_length,
            num_classes,
            trunk,
            fc_dims: [64, num_classes],
            exit_head: ExitHeadConfig::default(),
            late_input: LateInputConfig::default(),
            exits: vec![ExitSpec {
                attach_after_layer: 5,
                cumulative_data_fraction: 1.0,
                entropy_threshold: None,
                loss_weight: 1.0,
            }],
        }
    }

    /// Replaces the exit list with early exits at `(layer, fraction)` plus
    /// the terminal exit, assigning the default decreasing loss weights.
    pub fn with_early_exits(mut self, placements: &[(usize, f64)]) -> Self {
        let n = placements.len() + 1;
        let weights = default_loss_weights(n);
        self.exits = placements
            .iter()
            .enumerate()
            .map(|(i, &(layer, fraction))| ExitSpec {
                attach_after_layer: layer,
                cumulative_data_fraction: fraction,
                entropy_threshold: Some(0.5),
                loss_weight: weights[i],
            })
            .collect();
        self.exits.push(ExitSpec {
            attach_after_layer: self.trunk.len(),
            cumulative_data_fraction: 1.0,
            entropy_threshold: None,
            loss_weight: weights[n - 1],
        });
        self
    }

    pub fn num_exits(&self) -> usize {
        self.exits.len()
    }

    pub fn num_early_exits(&self) -> usize {
        self.exits.len().saturating_sub(1)
    }

    pub fn loss_weights(&self) -> Vec<f64> {
        self.exits.iter().map(|e| e.loss_weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.segment_length == 0 {
            return Err(Error::Config("channels and segment_length must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.trunk.is_empty() {
            return Err(Error::Config("trunk needs at least one conv stage".into()));
        }
        for (i, stage) in self.trunk.iter().enumerate() {
            if stage.out_channels == 0
                || stage.kernel_width == 0
                || stage.stride == 0
                || stage.pool_width == 0
                || stage.pool_stride == 0
            {
                return Err(Error::Config(format!("trunk layer {} has zero-sized config", i + 1)));
            }
        }
        if self.fc_dims[0] == 0 {
            return Err(Error::Config("fc hidden dim must be positive".into()));
        }
        if self.fc_dims[1] != self.num_classes {
            return Err(Error::Config(format!(
                "second fc layer must emit {} class logits, got {}",
                self.num_classes, self.fc_dims[1]
            )));
        }

        let exits = &self.exits;
        let terminal = exits
            .last()
            .ok_or_else(|| Error::Config("need at least the terminal exit".into()))?;
        if terminal.cumulative_data_fraction != 1.0 {
            return Err(Error::Config("terminal exit must have data fraction 1.0".into()));
        }
        if terminal.entropy_threshold.is_some() {
            return Err(Error::Config("terminal exit cannot carry an entropy threshold".into()));
        }
        if terminal.attach_after_layer != self.trunk.len() {
            return Err(Error::Config(format!(
                "terminal exit must attach after the last trunk layer ({})",
                self.trunk.len()
            )));
        }

        let mut prev_layer = 0usize;
        let mut prev_fraction = 0.0f64;
        for (i, exit) in exits.iter().enumerate() {
            let is_terminal = i == exits.len() - 1;
            if exit.loss_weight <= 0.0 || !exit.loss_weight.is_finite() {
                return Err(Error::Config(format!("exit {} loss weight must be positive", i + 1)));
            }
            if !is_terminal {
                if exit.cumulative_data_fraction <= 0.0 || exit.cumulative_data_fraction >= 1.0 {
                    return Err(Error::Config(format!(
                        "early exit {} data fraction must lie in (0, 1), got {}",
                        i + 1,
                        exit.cumulative_data_fraction
                    )));
                }
                match exit.entropy_threshold {
                    Some(t) if t.is_finite() && t >= 0.0 => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "early exit {} needs a finite non-negative entropy threshold",
                            i + 1
                        )))
                    }
                }
                if exit.attach_after_layer == 0 || exit.attach_after_layer >= self.trunk.len() {
                    return Err(Error::Config(format!(
                        "early exit {} must attach after layers 1..{}",
                        i + 1,
                        self.trunk.len() - 1
                    )));
                }
            }
            if exit.attach_after_layer <= prev_layer && i > 0 {
                return Err(Error::Config(format!(
                    "exit attachment layers must be strictly increasing (exit {} repeats layer {})",
                    i + 1,
                    exit.attach_after_layer
                )));
            }
            if exit.cumulative_data_fraction <= prev_fraction && i > 0 {
                return Err(Error::Config(format!(
                    "cumulative data fractions must be strictly increasing (exit {})",
                    i + 1
                )));
            }
            prev_layer = exit.attach_after_layer;
            prev_fraction = exit.cumulative_data_fraction;
        }
        Ok(())
    }
}

/// Default decreasing loss weights: `[2.0, 1.5, 1.0, 1.0, ...]` truncated
/// or padded to `n` exits.
pub fn default_loss_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| match i {
            0 => 2.0,
            1 => 1.5,
            _ => 1.0,
        })
        .collect()
}

/// Statically-resolved shapes for one [`ArchitectureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePlan {
    /// Per exit: sample index (exclusive) up to which data is available,
    /// `floor(c_n * L)`; the terminal entry equals `L`.
    pub boundaries: Vec<usize>,
    /// Per exit: 0-based trunk layer range `[start, end)` run in its stage.
    pub stage_layers: Vec<(usize, usize)>,
    /// Per exit: trunk feature-map length at the attachment point.
    pub map_len_at_attach: Vec<usize>,
    /// Per exit: trunk channel count at the attachment point.
    pub map_channels_at_attach: Vec<usize>,
    /// Per early exit: pooled length and flattened dim of the exit head.
    pub exit_pooled_len: Vec<usize>,
    pub exit_flat_dim: Vec<usize>,
    /// Per late block: pool width (= stride), output length.
    pub late_pool: Vec<usize>,
    pub late_out_len: Vec<usize>,
    /// Flattened dim feeding the terminal dense layers.
    pub terminal_flat_dim: usize,
    /// Cumulative multiply-accumulate count at each exit's logits: the
    /// compute-cost proxy for exit overhead reporting.
    pub macs_per_exit: Vec<u64>,
}

impl ShapePlan {
    /// Length of the raw slice delivered for exit `n`.
    pub fn slice_len(&self, exit: usize) -> usize {
        let start = if exit == 0 { 0 } else { self.boundaries[exit - 1] };
        self.boundaries[exit] - start
    }

    /// Sample range `[start, end)` of the raw slice for exit `n`.
    pub fn slice_bounds(&self, exit: usize) -> (usize, usize) {
        let start = if exit == 0 { 0 } else { self.boundaries[exit - 1] };
        (start, self.boundaries[exit])
    }
}

fn stage_output_len(len: usize, stage: &ConvStageConfig, layer_1based: usize) -> Result<usize> {
    if len < stage.kernel_width {
        return Err(Error::Shape(format!(
            "trunk layer {layer_1based}: feature length {len} shorter than kernel width {}",
            stage.kernel_width
        )));
    }
    let after_conv = (len - stage.kernel_width) / stage.stride + 1;
    if after_conv < stage.pool_width {
        return Err(Error::Shape(format!(
            "trunk layer {layer_1based}: conv output {after_conv} shorter than pool width {}",
            stage.pool_width
        )));
    }
    Ok((after_conv - stage.pool_width) / stage.pool_stride + 1)
}

/// Resolves every static shape of the staged network.
pub fn plan_shapes(spec: &ArchitectureSpec) -> Result<ShapePlan> {
    spec.validate()?;
    let num_exits = spec.exits.len();
    let len_f = spec.segment_length as f64;

    let mut boundaries = Vec::with_capacity(num_exits);
    for (i, exit) in spec.exits.iter().enumerate() {
        let b = if i == num_exits - 1 {
            spec.segment_length
        } else {
            (exit.cumulative_data_fraction * len_f).floor() as usize
        };
        if b == 0 {
            return Err(Error::Config(format!(
                "exit {} data fraction {} yields an empty slice",
                i + 1,
                exit.cumulative_data_fraction
            )));
        }
        if let Some(&prev) = boundaries.last() {
            if b <= prev {
                return Err(Error::Config(format!(
                    "exit {} slice boundary {} does not extend the previous boundary {}",
                    i + 1,
                    b,
                    prev
                )));
            }
        }
        boundaries.push(b);
    }

    let mut plan = ShapePlan {
        boundaries,
        stage_layers: Vec::with_capacity(num_exits),
        map_len_at_attach: Vec::with_capacity(num_exits),
        map_channels_at_attach: Vec::with_capacity(num_exits),
        exit_pooled_len: Vec::new(),
        exit_flat_dim: Vec::new(),
        late_pool: Vec::new(),
        late_out_len: Vec::new(),
        terminal_flat_dim: 0,
        macs_per_exit: Vec::with_capacity(num_exits),
    };

    let mut cur_len = plan.slice_len(0);
    let mut cur_layer = 0usize; // 0-based count of trunk layers already run
    let mut macs = 0u64;
    for (n, exit) in spec.exits.iter().enumerate() {
        if n > 0 {
            // Late-input block for the new slice, spliced by temporal
            // concatenation onto the trunk map at the previous attachment.
            let slice_len = plan.slice_len(n);
            let kw = spec.late_input.kernel_width;
            if slice_len < kw {
                return Err(Error::Shape(format!(
                    "late-input block {n}: slice length {slice_len} shorter than kernel width {kw}"
                )));
            }
            let after_conv = slice_len - kw + 1;
            let granule: usize = spec.trunk[..cur_layer]
                .iter()
                .map(|s| s.stride * s.pool_stride)
                .product();
            if after_conv < granule {
                return Err(Error::Shape(format!(
                    "late-input block {n}: conv output {after_conv} shorter than pool granularity {granule}"
                )));
            }
            let late_out = (after_conv - granule) / granule + 1;
            plan.late_pool.push(granule);
            plan.late_out_len.push(late_out);
            let late_out_channels = spec.trunk[cur_layer - 1].out_channels;
            macs += (spec.channels * late_out_channels * kw * after_conv) as u64;
            cur_len += late_out;
        }

        let stage_start = cur_layer;
        while cur_layer < exit.attach_after_layer {
            let stage = &spec.trunk[cur_layer];
            let in_channels = if cur_layer == 0 { spec.channels } else { spec.trunk[cur_layer - 1].out_channels };
            let conv_out = if cur_len >= stage.kernel_width {
                (cur_len - stage.kernel_width) / stage.stride + 1
            } else {
                0
            };
            macs += (in_channels * stage.out_channels * stage.kernel_width * conv_out) as u64;
            cur_len = stage_output_len(cur_len, &spec.trunk[cur_layer], cur_layer + 1)?;
            cur_layer += 1;
        }
        plan.stage_layers.push((stage_start, cur_layer));
        plan.map_len_at_attach.push(cur_len);
        let map_channels = spec.trunk[cur_layer - 1].out_channels;
        plan.map_channels_at_attach.push(map_channels);

        let is_terminal = n == num_exits - 1;
        if is_terminal {
            plan.terminal_flat_dim = map_channels * cur_len;
            let head_macs = plan.terminal_flat_dim * spec.fc_dims[0] + spec.fc_dims[0] * spec.fc_dims[1];
            plan.macs_per_exit.push(macs + head_macs as u64);
        } else {
            let head = &spec.exit_head;
            if cur_len < head.conv_width {
                return Err(Error::Shape(format!(
                    "exit {} head: attachment map length {cur_len} shorter than conv width {}",
                    n + 1,
                    head.conv_width
                )));
            }
            let after_conv = cur_len - head.conv_width + 1;
            if after_conv < head.pool_width {
                return Err(Error::Shape(format!(
                    "exit {} head: conv output {after_conv} shorter than pool width {}",
                    n + 1,
                    head.pool_width
                )));
            }
            let pooled = (after_conv - head.pool_width) / head.pool_stride + 1;
            plan.exit_pooled_len.push(pooled);
            plan.exit_flat_dim.push(head.conv_filters * pooled);
            let flat = head.conv_filters * pooled;
            let head_macs = map_channels * head.conv_filters * head.conv_width * after_conv
                + flat * head.hidden_dim
                + head.hidden_dim * spec.num_classes;
            plan.macs_per_exit.push(macs + head_macs as u64);
        }
    }

    Ok(plan)
}

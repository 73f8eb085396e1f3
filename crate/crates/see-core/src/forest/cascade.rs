//! Entropy-gated cascade of forests over growing data prefixes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{
    infer_segment, InferenceTrace, SegmentSource, StagedClassifier, StagedEvaluation,
    ThresholdVector,
};
use crate::kernel::Tensor2;

use super::ensemble::{predict_proba, train_forest, Forest, ForestConfig};
use super::featurize::{featurize_prefix, FeatureMode, FeatureSchema};

pub const CASCADE_FORMAT: &str = "see-forest-cascade";
pub const CASCADE_VERSION: u32 = 1;

/// One cascade stage: a forest over the prefix `[0, c*L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub forest: Forest,
    pub fraction: f64,
    /// Deployment entropy threshold; `None` on the terminal stage.
    pub threshold: Option<f64>,
}

/// Ordered stages ending in a full-data forest. Built only when the total
/// node count stays strictly below the baseline forest's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestCascade {
    pub channels: usize,
    pub segment_length: usize,
    pub num_classes: usize,
    pub mode: FeatureMode,
    pub stages: Vec<CascadeStage>,
    /// Node counts per stage, recorded at build time.
    pub stage_node_counts: Vec<usize>,
    /// Node count of the baseline the size constraint was checked against.
    pub baseline_node_count: usize,
}

impl ForestCascade {
    pub fn node_count(&self) -> usize {
        self.stages.iter().map(|s| s.forest.node_count()).sum()
    }

    /// Storage at 32 bytes per tree node.
    pub fn memory_kb(&self) -> f64 {
        self.node_count() as f64 * 32.0 / 1024.0
    }

    pub fn num_early_stages(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }
}

/// Trains one forest per prefix fraction and enforces the ensemble-size
/// constraint against the baseline forest.
///
/// `stage_trees[i]` is the tree count of stage i; sizes must be
/// non-decreasing (stages grow with the data they see).
pub fn build_cascade(
    train: &Dataset,
    fractions: &[f64],
    stage_trees: &[usize],
    max_depth: usize,
    mode: FeatureMode,
    baseline: &Forest,
    seed: u64,
) -> Result<ForestCascade> {
    train.validate()?;
    if fractions.is_empty() {
        return Err(Error::Config("cascade needs at least the full-data stage".into()));
    }
    if fractions.len() != stage_trees.len() {
        return Err(Error::Config(format!(
            "{} fractions but {} stage sizes",
            fractions.len(),
            stage_trees.len()
        )));
    }
    if *fractions.last().unwrap() != 1.0 {
        return Err(Error::Config("final cascade stage must use the full window (fraction 1.0)".into()));
    }
    for pair in fractions.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "cascade fractions must be strictly increasing, got {fractions:?}"
            )));
        }
    }
    if fractions[0] <= 0.0 {
        return Err(Error::Config("cascade fractions must be positive".into()));
    }
    for pair in stage_trees.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::Config(format!(
                "stage sizes must be non-decreasing, got {stage_trees:?}"
            )));
        }
    }
    if stage_trees.iter().any(|&t| t == 0) {
        return Err(Error::Config("every stage needs at least one tree".into()));
    }

    let channels = train.channels();
    let segment_length = train.segment_length();
    let num_classes = train.num_classes();
    let labels: Vec<usize> = train.segments.iter().map(|s| s.label).collect();

    let mut stages = Vec::with_capacity(fractions.len());
    for (i, (&fraction, &trees)) in fractions.iter().zip(stage_trees).enumerate() {
        let schema = FeatureSchema::for_segment(channels, segment_length, fraction, mode)?;
        let features: Vec<Vec<f64>> = train
            .segments
            .iter()
            .map(|s| featurize_prefix(&s.data, fraction, mode))
            .collect::<Result<_>>()?;
        let cfg = ForestConfig {
            num_trees: trees,
            max_depth,
            seed: seed ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
            bootstrap: true,
            feature_subsample: true,
        };
        let forest = train_forest(&features, &labels, num_classes, schema, &cfg)?;
        stages.push(CascadeStage {
            forest,
            fraction,
            threshold: None,
        });
    }

    let stage_node_counts: Vec<usize> = stages.iter().map(|s| s.forest.node_count()).collect();
    let total: usize = stage_node_counts.iter().sum();
    let baseline_nodes = baseline.node_count();
    if total >= baseline_nodes {
        return Err(Error::Config(format!(
            "cascade node count {total} (stages {stage_node_counts:?}) is not below the baseline's {baseline_nodes}"
        )));
    }

    Ok(ForestCascade {
        channels,
        segment_length,
        num_classes,
        mode,
        stages,
        stage_node_counts,
        baseline_node_count: baseline_nodes,
    })
}

// ── Staged inference over the cascade ───────────────────────────────

struct CascadeEvaluation<'c> {
    cascade: &'c ForestCascade,
    buffer: Option<Tensor2>,
    next_stage: usize,
}

impl StagedEvaluation for CascadeEvaluation<'_> {
    fn advance(&mut self, slice: &Tensor2) -> Result<Vec<f64>> {
        let n = self.next_stage;
        if n >= self.cascade.stages.len() {
            return Err(Error::Usage("all cascade stages already evaluated".into()));
        }
        let buffer = match self.buffer.take() {
            None => slice.clone(),
            Some(prev) => prev.concat_time(slice)?,
        };
        let boundary = self.cascade.slice_boundaries()[n];
        if buffer.length() != boundary {
            return Err(Error::Shape(format!(
                "stage {} has {} accumulated samples, expected {boundary}",
                n + 1,
                buffer.length()
            )));
        }
        // The buffer holds exactly the stage's prefix.
        let features = featurize_prefix(&buffer, 1.0, self.cascade.mode)?;
        let probs = predict_proba(&self.cascade.stages[n].forest, &features)?;
        self.buffer = Some(buffer);
        self.next_stage += 1;
        Ok(probs)
    }
}

impl StagedClassifier for ForestCascade {
    fn num_exits(&self) -> usize {
        self.stages.len()
    }

    fn exit_fractions(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.fraction).collect()
    }

    fn slice_boundaries(&self) -> Vec<usize> {
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == self.stages.len() - 1 {
                    self.segment_length
                } else {
                    (s.fraction * self.segment_length as f64).floor() as usize
                }
            })
            .collect()
    }

    fn begin_segment(&self) -> Box<dyn StagedEvaluation + '_> {
        Box::new(CascadeEvaluation {
            cascade: self,
            buffer: None,
            next_stage: 0,
        })
    }
}

/// Entropy-gated inference for one segment; same contract as the CNN path.
pub fn cascade_infer<S>(
    cascade: &ForestCascade,
    source: &mut S,
    thresholds: &ThresholdVector,
) -> Result<InferenceTrace>
where
    S: SegmentSource + ?Sized,
{
    infer_segment(cascade, source, thresholds)
}

// ── Serialization ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CascadeFile {
    format: String,
    version: u32,
    cascade: ForestCascade,
}

pub fn cascade_to_json(cascade: &ForestCascade) -> Result<String> {
    Ok(serde_json::to_string(&CascadeFile {
        format: CASCADE_FORMAT.into(),
        version: CASCADE_VERSION,
        cascade: cascade.clone(),
    })?)
}

pub fn cascade_from_json(json: &str) -> Result<ForestCascade> {
    let file: CascadeFile = serde_json::from_str(json)?;
    if file.format != CASCADE_FORMAT {
        return Err(Error::Serialize(format!(
            "expected format `{CASCADE_FORMAT}`, found `{}`",
            file.format
        )));
    }
    if file.version != CASCADE_VERSION {
        return Err(Error::Serialize(format!("unsupported cascade version {}", file.version)));
    }
    Ok(file.cascade)
}

pub fn save_cascade(path: &Path, cascade: &ForestCascade) -> Result<()> {
    fs::write(path, cascade_to_json(cascade)? + "\n")?;
    Ok(())
}

pub fn load_cascade(path: &Path) -> Result<ForestCascade> {
    cascade_from_json(fs::read_to_string(path)?.trim_end())
}

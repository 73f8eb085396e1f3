//! Bootstrap-aggregated forests over prefix features.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::featurize::FeatureSchema;
use super::tree::{DecisionTree, TreeGrowth};

pub const FOREST_FORMAT: &str = "see-forest";
pub const FOREST_VERSION: u32 = 1;

/// Forest training controls; bootstrap and per-split feature subsampling
/// can be disabled to make growth fully exhaustive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub bootstrap: bool,
    pub feature_subsample: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 15,
            max_depth: 8,
            seed: 0,
            bootstrap: true,
            feature_subsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    pub num_classes: usize,
    pub feature_schema: FeatureSchema,
}

impl Forest {
    pub fn node_count(&self) -> usize {
        self.trees.iter().map(|t| t.node_count()).sum()
    }

    /// Storage at 32 bytes per tree node.
    pub fn memory_kb(&self) -> f64 {
        self.node_count() as f64 * 32.0 / 1024.0
    }
}

/// Trains `num_trees` Gini trees on bootstrap samples with sqrt(d) feature
/// subsets per split; per-tree rng streams keep the result deterministic
/// for a fixed seed.
pub fn train_forest(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    schema: FeatureSchema,
    cfg: &ForestConfig,
) -> Result<Forest> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} feature rows vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    if cfg.num_trees == 0 || cfg.max_depth == 0 {
        return Err(Error::Config("forest needs at least one tree and depth one".into()));
    }
    for row in features {
        if row.len() != schema.dim {
            return Err(Error::Usage(format!(
                "feature row has dim {}, schema says {}",
                row.len(),
                schema.dim
            )));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Usage(format!("label {bad} out of range for {num_classes} classes")));
    }

    let growth = TreeGrowth {
        max_depth: cfg.max_depth,
        feature_subsample: cfg.feature_subsample,
    };
    let n = features.len();
    let mut trees = Vec::with_capacity(cfg.num_trees);
    for tree_idx in 0..cfg.num_trees {
        // Independent, reproducible stream per tree.
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (tree_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let indices: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(DecisionTree::grow(features, labels, &indices, num_classes, growth, &mut rng)?);
    }
    Ok(Forest {
        trees,
        num_classes,
        feature_schema: schema,
    })
}

/// Average of the per-tree leaf class distributions.
pub fn predict_proba(forest: &Forest, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != forest.feature_schema.dim {
        return Err(Error::Usage(format!(
            "feature vector has dim {}, forest schema says {}",
            features.len(),
            forest.feature_schema.dim
        )));
    }
    let mut probs = vec![0.0; forest.num_classes];
    for tree in &forest.trees {
        for (p, t) in probs.iter_mut().zip(tree.predict_proba(features)) {
            *p += t;
        }
    }
    let count = forest.trees.len() as f64;
    for p in &mut probs {
        *p /= count;
    }
    Ok(probs)
}

// ── Serialization ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: Forest,
}

pub fn forest_to_json(forest: &Forest) -> Result<String> {
    Ok(serde_json::to_string(&ForestFile {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        forest: forest.clone(),
    })?)
}

pub fn forest_from_json(json: &str) -> Result<Forest> {
    let file: ForestFile = serde_json::from_str(json)?;
    if file.format != FOREST_FORMAT {
        return Err(Error::Serialize(format!(
            "expected format `{FOREST_FORMAT}`, found `{}`",
            file.format
        )));
    }
    if file.version != FOREST_VERSION {
        return Err(Error::Serialize(format!("unsupported forest version {}", file.version)));
    }
    Ok(file.forest)
}

pub fn save_forest(path: &Path, forest: &Forest) -> Result<()> {
    fs::write(path, forest_to_json(forest)? + "\n")?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    forest_from_json(fs::read_to_string(path)?.trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::featurize::FeatureMode;
    use rand_distr::{Distribution, StandardNormal};

    fn schema(dim: usize) -> FeatureSchema {
        FeatureSchema {
            fraction: 1.0,
            mode: FeatureMode::SummaryStats,
            dim,
        }
    }

    fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2usize {
            let center = if class == 0 { -4.0 } else { 4.0 };
            for _ in 0..n_per {
                let x: f64 = normal.sample(&mut rng);
                let y: f64 = normal.sample(&mut rng);
                features.push(vec![center + x, -center + y]);
                labels.push(class);
            }
        }
        (features, labels)
    }

    #[test]
    fn pure_single_class_predicts_that_class() {
        let features = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let labels = vec![1, 1, 1];
        let forest = train_forest(&features, &labels, 3, schema(2), &ForestConfig::default()).unwrap();
        for tree in &forest.trees {
            assert_eq!(tree.node_count(), 1);
        }
        assert_eq!(predict_proba(&forest, &[1.0, 1.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn separated_blobs_reach_99_percent_train_accuracy() {
        let (features, labels) = blobs(50, 1);
        let cfg = ForestConfig {
            num_trees: 10,
            max_depth: 4,
            ..ForestConfig::default()
        };
        let forest = train_forest(&features, &labels, 2, schema(2), &cfg).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| {
                let p = predict_proba(&forest, f).unwrap();
                let pred = if p[1] > p[0] { 1 } else { 0 };
                pred == l
            })
            .count();
        assert!(correct as f64 / labels.len() as f64 >= 0.99);
    }

    #[test]
    fn same_seed_gives_identical_forests() {
        let (features, labels) = blobs(20, 2);
        let cfg = ForestConfig { num_trees: 5, max_depth: 3, ..ForestConfig::default() };
        let a = train_forest(&features, &labels, 2, schema(2), &cfg).unwrap();
        let b = train_forest(&features, &labels, 2, schema(2), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn averaging_two_disagreeing_trees_splits_evenly() {
        use crate::forest::tree::TreeNode;
        let forest = Forest {
            trees: vec![
                DecisionTree { nodes: vec![TreeNode::Leaf { histogram: vec![3.0, 0.0] }], num_classes: 2, max_depth: 1 },
                DecisionTree { nodes: vec![TreeNode::Leaf { histogram: vec![0.0, 5.0] }], num_classes: 2, max_depth: 1 },
            ],
            num_classes: 2,
            feature_schema: schema(2),
        };
        assert_eq!(predict_proba(&forest, &[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn prediction_entropy_is_finite_and_non_negative() {
        let (features, labels) = blobs(15, 3);
        let forest = train_forest(&features, &labels, 2, schema(2), &ForestConfig::default()).unwrap();
        for f in &features {
            let p = predict_proba(&forest, f).unwrap();
            let e = crate::inference::entropy(&p).unwrap();
            assert!(e.is_finite() && e >= 0.0);
        }
    }

    #[test]
    fn schema_mismatch_is_usage_error() {
        let (features, labels) = blobs(5, 4);
        let forest = train_forest(&features, &labels, 2, schema(2), &ForestConfig::default()).unwrap();
        assert!(matches!(predict_proba(&forest, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn forest_json_round_trip_is_bit_exact() {
        let (features, labels) = blobs(10, 5);
        let forest = train_forest(&features, &labels, 2, schema(2), &ForestConfig::default()).unwrap();
        let json = forest_to_json(&forest).unwrap();
        let back = forest_from_json(&json).unwrap();
        assert_eq!(back, forest);
        assert_eq!(forest_to_json(&back).unwrap(), json);
    }
}

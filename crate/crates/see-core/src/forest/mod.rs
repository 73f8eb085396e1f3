//! Random-forest variant of the staged classifier: a baseline forest on
//! full segments plus a cascade of successively larger forests over
//! growing data prefixes, gated by entropy at inference time.

mod cascade;
mod ensemble;
mod featurize;
mod tree;

pub use cascade::{
    build_cascade, cascade_infer, cascade_from_json, cascade_to_json, load_cascade, save_cascade,
    CascadeStage, ForestCascade, CASCADE_FORMAT, CASCADE_VERSION,
};
pub use ensemble::{
    forest_from_json, forest_to_json, load_forest, predict_proba, save_forest, train_forest,
    Forest, ForestConfig, FOREST_FORMAT, FOREST_VERSION,
};
pub use featurize::{featurize_prefix, FeatureMode, FeatureSchema};
pub use tree::{DecisionTree, TreeGrowth, TreeNode};

//! Gini-impurity decision trees.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat node storage; children referenced by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Training-sample count per class at this leaf.
        histogram: Vec<f64>,
    },
}

/// Growth controls shared by every tree of a forest.
#[derive(Debug, Clone, Copy)]
pub struct TreeGrowth {
    pub max_depth: usize,
    /// Consider only ceil(sqrt(d)) random features per split.
    pub feature_subsample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub num_classes: usize,
    pub max_depth: usize,
}

impl DecisionTree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Normalized class histogram of the leaf this feature vector lands in.
    pub fn predict_proba(&self, features: &[f64]) -> Vec<f64> {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Split { feature, threshold, left, right } => {
                    idx = if features[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { histogram } => {
                    let total: f64 = histogram.iter().sum();
                    return histogram.iter().map(|c| c / total).collect();
                }
            }
        }
    }

    /// Grows a tree on the index subset `indices` of `features`/`labels`.
    ///
    /// Splits minimize the weighted Gini impurity over midpoint thresholds;
    /// ties keep the first candidate in feature order, so growth is
    /// deterministic for a fixed rng stream.
    pub fn grow(
        features: &[Vec<f64>],
        labels: &[usize],
        indices: &[usize],
        num_classes: usize,
        growth: TreeGrowth,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Usage("cannot grow a tree on zero samples".into()));
        }
        let dim = features
            .first()
            .map(|f| f.len())
            .ok_or_else(|| Error::Usage("cannot grow a tree on an empty feature matrix".into()))?;
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            num_classes,
            max_depth: growth.max_depth,
        };
        let mut scratch: Vec<usize> = indices.to_vec();
        grow_node(features, labels, &mut scratch, num_classes, dim, growth, 0, rng, &mut tree.nodes)?;
        Ok(tree)
    }
}

fn histogram(labels: &[usize], indices: &[usize], num_classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; num_classes];
    for &i in indices {
        h[labels[i]] += 1.0;
    }
    h
}

fn gini(hist: &[f64], total: f64) -> f64 {
    1.0 - hist.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Exhaustive scan over the candidate features using sorted-order
/// incremental class counts.
fn best_split(
    features: &[Vec<f64>],
    labels: &[usize],
    indices: &[usize],
    num_classes: usize,
    candidates: &[usize],
) -> Option<BestSplit> {
    let total = indices.len() as f64;
    let full_hist = histogram(labels, indices, num_classes);
    let mut best: Option<BestSplit> = None;

    let mut order: Vec<usize> = indices.to_vec();
    for &feature in candidates {
        order.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("finite features")
        });
        let mut left_hist = vec![0.0; num_classes];
        let mut right_hist = full_hist.clone();
        for k in 0..order.len() - 1 {
            let i = order[k];
            left_hist[labels[i]] += 1.0;
            right_hist[labels[i]] -= 1.0;
            let a = features[i][feature];
            let b = features[order[k + 1]][feature];
            if a == b {
                continue;
            }
            let n_left = (k + 1) as f64;
            let n_right = total - n_left;
            let score = (n_left * gini(&left_hist, n_left) + n_right * gini(&right_hist, n_right)) / total;
            if best.as_ref().map_or(true, |b| score < b.score) {
                best = Some(BestSplit {
                    score,
                    feature,
                    threshold: (a + b) / 2.0,
                });
            }
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    features: &[Vec<f64>],
    labels: &[usize],
    indices: &mut Vec<usize>,
    num_classes: usize,
    dim: usize,
    growth: TreeGrowth,
    depth: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<TreeNode>,
) -> Result<usize> {
    let hist = histogram(labels, indices, num_classes);
    let pure = hist.iter().filter(|&&c| c > 0.0).count() <= 1;
    if pure || depth >= growth.max_depth || indices.len() < 2 {
        nodes.push(TreeNode::Leaf { histogram: hist });
        return Ok(nodes.len() - 1);
    }

    let candidates: Vec<usize> = if growth.feature_subsample {
        let k = (dim as f64).sqrt().ceil() as usize;
        let mut picked = sample(rng, dim, k.min(dim)).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..dim).collect()
    };

    let Some(split) = best_split(features, labels, indices, num_classes, &candidates) else {
        nodes.push(TreeNode::Leaf { histogram: hist });
        return Ok(nodes.len() - 1);
    };

    let (mut left_idx, mut right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| features[i][split.feature] <= split.threshold);
    debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

    let slot = nodes.len();
    nodes.push(TreeNode::Leaf { histogram: Vec::new() }); // placeholder
    let left = grow_node(features, labels, &mut left_idx, num_classes, dim, growth, depth + 1, rng, nodes)?;
    let right = grow_node(features, labels, &mut right_idx, num_classes, dim, growth, depth + 1, rng, nodes)?;
    nodes[slot] = TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    Ok(slot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grow_plain(features: &[Vec<f64>], labels: &[usize], classes: usize, depth: usize) -> DecisionTree {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let indices: Vec<usize> = (0..features.len()).collect();
        DecisionTree::grow(
            features,
            labels,
            &indices,
            classes,
            TreeGrowth { max_depth: depth, feature_subsample: false },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn pure_data_grows_single_leaf() {
        let features = vec![vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![1, 1, 1];
        let tree = grow_plain(&features, &labels, 2, 4);
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.predict_proba(&[1.5]), vec![0.0, 1.0]);
    }

    #[test]
    fn single_threshold_separates_two_classes() {
        let features = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let labels = vec![0, 0, 1, 1];
        let tree = grow_plain(&features, &labels, 2, 4);
        assert_eq!(tree.predict_proba(&[0.5]), vec![1.0, 0.0]);
        assert_eq!(tree.predict_proba(&[10.5]), vec![0.0, 1.0]);
        // midpoint threshold at 5.5
        match &tree.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 5.5);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn depth_limit_stops_growth() {
        let features: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let tree = grow_plain(&features, &labels, 2, 1);
        // one split plus two leaves at most
        assert!(tree.node_count() <= 3);
    }

    #[test]
    fn leaf_histograms_sum_to_sample_counts() {
        let features: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let labels = vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
        let tree = grow_plain(&features, &labels, 3, 3);
        let mut leaf_total = 0.0;
        for node in &tree.nodes {
            if let TreeNode::Leaf { histogram } = node {
                leaf_total += histogram.iter().sum::<f64>();
            }
        }
        assert_eq!(leaf_total, 10.0);
    }

    /// Independent brute-force grower: enumerate every (feature, midpoint)
    /// split, minimize weighted Gini, recurse. Used as the oracle for the
    /// library tree with randomness disabled.
    fn brute_force_proba(
        features: &[Vec<f64>],
        labels: &[usize],
        indices: &[usize],
        classes: usize,
        depth_left: usize,
        query: &[f64],
    ) -> Vec<f64> {
        let hist = {
            let mut h = vec![0.0; classes];
            for &i in indices {
                h[labels[i]] += 1.0;
            }
            h
        };
        let n = indices.len() as f64;
        let pure = hist.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth_left == 0 || indices.len() < 2 {
            return hist.iter().map(|c| c / n).collect();
        }
        let dim = features[0].len();
        let gini_of = |h: &[f64], n: f64| 1.0 - h.iter().map(|c| (c / n).powi(2)).sum::<f64>();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..dim {
            let mut vals: Vec<f64> = indices.iter().map(|&i| features[i][f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let mut lh = vec![0.0; classes];
                let mut rh = vec![0.0; classes];
                for &i in indices {
                    if features[i][f] <= thr {
                        lh[labels[i]] += 1.0;
                    } else {
                        rh[labels[i]] += 1.0;
                    }
                }
                let nl: f64 = lh.iter().sum();
                let nr: f64 = rh.iter().sum();
                let score = (nl * gini_of(&lh, nl) + nr * gini_of(&rh, nr)) / n;
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else {
            return hist.iter().map(|c| c / n).collect();
        };
        let (l, r): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| features[i][f] <= thr);
        if query[f] <= thr {
            brute_force_proba(features, labels, &l, classes, depth_left - 1, query)
        } else {
            brute_force_proba(features, labels, &r, classes, depth_left - 1, query)
        }
    }

    #[test]
    fn matches_brute_force_exhaustive_tree_on_tiny_data() {
        // 18 samples, 3 features, 3 classes; distinct values keep the best
        // split unique at every node.
        let features: Vec<Vec<f64>> = (0..18)
            .map(|i| {
                let x = i as f64;
                vec![x * 1.37 % 7.1, (x * 2.11 + 0.71) % 5.3, (x * 0.83 + 2.0) % 3.7]
            })
            .collect();
        let labels: Vec<usize> = (0..18).map(|i| (i * 5 % 3) as usize).collect();
        let indices: Vec<usize> = (0..18).collect();
        let tree = grow_plain(&features, &labels, 3, 4);
        for q in &features {
            let got = tree.predict_proba(q);
            let want = brute_force_proba(&features, &labels, &indices, 3, 4, q);
            assert_eq!(got, want, "query {q:?}");
        }
    }
}

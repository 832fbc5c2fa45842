//! Gradient-boosted regression trees with exact greedy axis-aligned splits
//! under squared-error loss.
//!
//! The boosting seed stage is the training-target mean; each stage fits a
//! tree to the current residuals and adds `learning_rate` times its
//! prediction. No row or column subsampling is performed, so fitting is
//! deterministic and the per-stage training MSE is nonincreasing for
//! learning rates in (0, 1].

use serde::{Deserialize, Serialize};

use super::{
    FeatureMatrix, ModelArtifact, ModelError, ModelFamily, ModelParams, TrainMeta,
    ARTIFACT_FORMAT_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_stages: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_stages: 300,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_stages < 1 {
            return Err(ModelError::InvalidConfig("n_stages must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf < 1 {
            return Err(ModelError::InvalidConfig(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    /// Children indices; `usize::MAX` marks a leaf.
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        Self {
            feature: 0,
            threshold: 0.0,
            left: usize::MAX,
            right: usize::MAX,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            node = if features[node.feature] < node.threshold {
                &self.nodes[node.left]
            } else {
                &self.nodes[node.right]
            };
        }
        node.value
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtParams {
    pub initial: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training MSE after each stage.
    pub stage_mse: Vec<f64>,
}

impl GbtParams {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut acc = self.initial;
        for tree in &self.trees {
            acc += self.learning_rate * tree.predict(features);
        }
        acc
    }
}

/// One feature's rows in a node, pre-sorted by value. Partitioning child
/// nodes preserves the order, so each node's split scan is O(rows).
struct SortedNode {
    /// per feature: row indices sorted ascending by that feature's value
    by_feature: Vec<Vec<usize>>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn find_best_split(
    node: &SortedNode,
    x: &FeatureMatrix,
    residual: &[f64],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = node.by_feature[0].len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_sum: f64 = node.by_feature[0].iter().map(|&i| residual[i]).sum();
    let parent_score = total_sum * total_sum / n as f64;
    let mut best: Option<SplitChoice> = None;
    for (f, order) in node.by_feature.iter().enumerate() {
        let mut left_sum = 0.0;
        for (pos, &i) in order.iter().enumerate().take(n - 1) {
            left_sum += residual[i];
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let v = x.row(i)[f];
            let v_next = x.row(order[pos + 1])[f];
            if v_next <= v {
                continue; // split only between distinct values
            }
            let right_sum = total_sum - left_sum;
            // maximizing sum-of-squares score == minimizing child SSE
            let score = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / n_right as f64
                - parent_score;
            // strict improvement keeps the lowest feature index / lowest
            // threshold on exact ties
            if score > best.as_ref().map_or(0.0, |b| b.gain) {
                let mut threshold = 0.5 * (v + v_next);
                if !(threshold > v && threshold <= v_next) {
                    threshold = v_next;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    gain: score,
                });
            }
        }
    }
    best
}

fn build_tree(
    x: &FeatureMatrix,
    residual: &[f64],
    config: &GbtConfig,
    root_rows: &[usize],
) -> Tree {
    let mut nodes = Vec::new();
    let root = SortedNode {
        by_feature: (0..x.n_features())
            .map(|f| {
                let mut order = root_rows.to_vec();
                order.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]));
                order
            })
            .collect(),
    };
    nodes.push(TreeNode::leaf(0.0));
    grow(&mut nodes, 0, root, x, residual, config, 0);
    Tree { nodes }
}

fn grow(
    nodes: &mut Vec<TreeNode>,
    node_idx: usize,
    node: SortedNode,
    x: &FeatureMatrix,
    residual: &[f64],
    config: &GbtConfig,
    depth: usize,
) {
    let rows = &node.by_feature[0];
    let mean = rows.iter().map(|&i| residual[i]).sum::<f64>() / rows.len() as f64;
    let split = if depth < config.max_depth {
        find_best_split(&node, x, residual, config.min_samples_leaf)
    } else {
        None
    };
    match split {
        None => nodes[node_idx] = TreeNode::leaf(mean),
        Some(s) => {
            let goes_left: Vec<bool> = {
                let mut mask = vec![false; x.n_rows()];
                for &i in rows {
                    mask[i] = x.row(i)[s.feature] < s.threshold;
                }
                mask
            };
            let partition = |order: &[usize]| {
                let mut left = Vec::new();
                let mut right = Vec::new();
                for &i in order {
                    if goes_left[i] {
                        left.push(i);
                    } else {
                        right.push(i);
                    }
                }
                (left, right)
            };
            let mut left_lists = Vec::with_capacity(node.by_feature.len());
            let mut right_lists = Vec::with_capacity(node.by_feature.len());
            for order in &node.by_feature {
                let (l, r) = partition(order);
                left_lists.push(l);
                right_lists.push(r);
            }
            let left_idx = nodes.len();
            nodes.push(TreeNode::leaf(0.0));
            let right_idx = nodes.len();
            nodes.push(TreeNode::leaf(0.0));
            nodes[node_idx] = TreeNode {
                feature: s.feature,
                threshold: s.threshold,
                left: left_idx,
                right: right_idx,
                value: mean,
            };
            grow(
                nodes,
                left_idx,
                SortedNode {
                    by_feature: left_lists,
                },
                x,
                residual,
                config,
                depth + 1,
            );
            grow(
                nodes,
                right_idx,
                SortedNode {
                    by_feature: right_lists,
                },
                x,
                residual,
                config,
                depth + 1,
            );
        }
    }
}

/// Fits stagewise additive trees to squared-error residuals. `seed` is
/// recorded in metadata; the fit itself uses no randomness.
pub fn fit_gbt(m: &FeatureMatrix, config: &GbtConfig, seed: u64) -> Result<ModelArtifact, ModelError> {
    config.validate()?;
    if m.n_rows() == 0 {
        return Err(ModelError::InsufficientData { needed: 1, got: 0 });
    }
    let canon = m.subset(&m.canonical_order());
    let stats = canon.fit_stats();
    let n = canon.n_rows();
    let initial = canon.targets().iter().sum::<f64>() / n as f64;
    let mut predictions = vec![initial; n];
    let mut residual: Vec<f64> = canon
        .targets()
        .iter()
        .zip(&predictions)
        .map(|(y, p)| y - p)
        .collect();
    let all_rows: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(config.n_stages);
    let mut stage_mse = Vec::with_capacity(config.n_stages);
    for _ in 0..config.n_stages {
        let tree = build_tree(&canon, &residual, config, &all_rows);
        for i in 0..n {
            predictions[i] += config.learning_rate * tree.predict(canon.row(i));
            residual[i] = canon.targets()[i] - predictions[i];
        }
        let mse = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
        stage_mse.push(mse);
        trees.push(tree);
    }
    let final_mse = stage_mse.last().copied();
    Ok(ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        family: ModelFamily::Gbt,
        n_features: canon.n_features(),
        stats,
        params: ModelParams::Gbt(GbtParams {
            initial,
            learning_rate: config.learning_rate,
            trees,
            stage_mse,
        }),
        meta: TrainMeta {
            seed,
            epochs_or_stages: config.n_stages,
            final_train_loss: final_mse,
            final_val_loss: None,
            loss_curve: Vec::new(),
            notes: vec!["deterministic fit: no row or column subsampling".into()],
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(n_stages: usize, max_depth: usize, lr: f64) -> GbtConfig {
        GbtConfig {
            n_stages,
            max_depth,
            learning_rate: lr,
            min_samples_leaf: 1,
        }
    }

    #[test]
    fn single_stage_depth_zero_predicts_mean() {
        // integer targets summing to a multiple of n keep the identity exact
        let y = vec![1.0, 2.0, 3.0, 6.0, 9.0, 4.0, 7.0, 8.0];
        let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let m = FeatureMatrix::from_xy(1, x, y);
        let artifact = fit_gbt(&m, &tiny_config(1, 0, 1.0), 0).unwrap();
        for i in 0..m.n_rows() {
            let p = artifact.predict(&m).unwrap()[i];
            assert_eq!(p, mean);
        }
    }

    #[test]
    fn piecewise_constant_target_is_learned_exactly() {
        // four plateaus of one feature
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let v = i as f64 / 10.0; // 0.0 .. 3.9
            x.push(v);
            y.push(match v {
                v if v < 1.0 => 2.0,
                v if v < 2.0 => -1.0,
                v if v < 3.0 => 4.0,
                _ => 0.5,
            });
        }
        let m = FeatureMatrix::from_xy(1, x, y);
        let artifact = fit_gbt(&m, &tiny_config(50, 2, 1.0), 0).unwrap();
        let super::super::ModelParams::Gbt(p) = &artifact.params else {
            panic!()
        };
        assert!(
            *p.stage_mse.last().unwrap() < 1e-6,
            "final MSE {}",
            p.stage_mse.last().unwrap()
        );
    }

    /// Exhaustive split oracle: try every (feature, distinct-value boundary)
    /// split and compute child SSE directly.
    fn brute_force_best_split(
        x: &FeatureMatrix,
        residual: &[f64],
        min_leaf: usize,
    ) -> Option<(usize, f64, f64)> {
        let n = x.n_rows();
        let sse = |rows: &[usize]| -> f64 {
            if rows.is_empty() {
                return 0.0;
            }
            let mean = rows.iter().map(|&i| residual[i]).sum::<f64>() / rows.len() as f64;
            rows.iter()
                .map(|&i| (residual[i] - mean).powi(2))
                .sum::<f64>()
        };
        let all: Vec<usize> = (0..n).collect();
        let parent = sse(&all);
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..x.n_features() {
            let mut values: Vec<f64> = (0..n).map(|i| x.row(i)[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let threshold = 0.5 * (w[0] + w[1]);
                let left: Vec<usize> =
                    (0..n).filter(|&i| x.row(i)[f] < threshold).collect();
                let right: Vec<usize> =
                    (0..n).filter(|&i| x.row(i)[f] >= threshold).collect();
                if left.len() < min_leaf || right.len() < min_leaf {
                    continue;
                }
                let gain = parent - sse(&left) - sse(&right);
                if best.is_none() || gain > best.unwrap().2 + 1e-12 {
                    best = Some((f, threshold, gain));
                }
            }
        }
        best
    }

    #[test]
    fn first_split_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 60;
        let d = 3;
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| if x[i * d + 1] < 0.2 { 1.0 } else { -1.0 })
            .collect();
        let m = FeatureMatrix::from_xy(d, x, y.clone());
        let canon = m.subset(&m.canonical_order());
        let residual: Vec<f64> = {
            let mean = canon.targets().iter().sum::<f64>() / n as f64;
            canon.targets().iter().map(|t| t - mean).collect()
        };
        let node = SortedNode {
            by_feature: (0..d)
                .map(|f| {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| canon.row(a)[f].total_cmp(&canon.row(b)[f]));
                    order
                })
                .collect(),
        };
        let chosen = find_best_split(&node, &canon, &residual, 1).unwrap();
        let (of, ot, ogain) = brute_force_best_split(&canon, &residual, 1).unwrap();
        assert_eq!(chosen.feature, of);
        assert!((chosen.threshold - ot).abs() < 1e-12);
        assert!((chosen.gain - ogain).abs() < 1e-9 * (1.0 + ogain.abs()));
    }

    #[test]
    fn training_mse_is_nonincreasing_on_random_data() {
        for seed in [1u64, 2, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 80;
            let d = 4;
            let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = FeatureMatrix::from_xy(d, x, y);
            let cfg = GbtConfig {
                n_stages: 60,
                max_depth: 3,
                learning_rate: 0.3,
                min_samples_leaf: 2,
            };
            let artifact = fit_gbt(&m, &cfg, seed).unwrap();
            let super::super::ModelParams::Gbt(p) = &artifact.params else {
                panic!()
            };
            for w in p.stage_mse.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12 * (1.0 + w[0]),
                    "MSE increased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn fit_is_row_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 50;
        let d = 2;
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = FeatureMatrix::from_xy(d, x, y);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(13);
        perm.swap(3, 40);
        let m2 = m.subset(&perm);
        let cfg = tiny_config(20, 3, 0.5);
        let a1 = fit_gbt(&m, &cfg, 0).unwrap();
        let a2 = fit_gbt(&m2, &cfg, 0).unwrap();
        let p1 = a1.predict(&m).unwrap();
        let p2 = a2.predict(&m).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let m = FeatureMatrix::from_xy(1, vec![0.0, 1.0], vec![0.0, 1.0]);
        let bad = GbtConfig {
            learning_rate: 1.5,
            ..GbtConfig::default()
        };
        assert!(matches!(
            fit_gbt(&m, &bad, 0),
            Err(ModelError::InvalidConfig(_))
        ));
        let bad = GbtConfig {
            n_stages: 0,
            ..GbtConfig::default()
        };
        assert!(matches!(
            fit_gbt(&m, &bad, 0),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn same_inputs_give_bit_identical_predictions() {
        let (x, y) = crate::model::ols::tests::exact_linear_data(2, 64);
        let m = FeatureMatrix::from_xy(2, x, y);
        let cfg = GbtConfig::default();
        let a = fit_gbt(&m, &cfg, 7).unwrap();
        let p1 = a.predict(&m).unwrap();
        let p2 = a.predict(&m).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn empty_prediction_is_empty() {
        let m = FeatureMatrix::from_xy(1, vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        let a = fit_gbt(&m, &tiny_config(3, 1, 1.0), 0).unwrap();
        let preds = a.predict_rows(&[]).unwrap();
        assert!(preds.is_empty());
    }
}

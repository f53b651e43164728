//! Exact path-dependent TreeSHAP for the GBDT models, plus CATE-level
//! attribution for the T-learner via additivity on the margin scale.
//!
//! The conditional expectation behind the attribution weights absent
//! features by the per-node cover recorded at fit time, so no background
//! dataset is needed and small trees can be checked against a brute-force
//! subset-enumeration oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::{DecisionTree, GbdtModel, Node};
use crate::meta::TLearnerModel;

/// Which prediction surface a SHAP matrix explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapTarget {
    Mu1,
    Mu0,
    Cate,
}

/// Per-record, per-feature additive attributions on the margin scale:
/// for every row, base_value + sum(values[row]) equals the model's raw
/// margin prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub values: Vec<Vec<f64>>,
    pub base_value: f64,
    pub target: ShapTarget,
}

impl ShapMatrix {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn d(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }
}

/// Cover-weighted expectation of a tree.
fn tree_expectation(tree: &DecisionTree, idx: usize) -> f64 {
    match &tree.nodes[idx] {
        Node::Leaf { value, .. } => *value,
        Node::Branch {
            left, right, cover, ..
        } => {
            let l = &tree.nodes[*left];
            let r = &tree.nodes[*right];
            (l.cover() * tree_expectation(tree, *left)
                + r.cover() * tree_expectation(tree, *right))
                / cover
        }
    }
}

fn tree_max_depth(tree: &DecisionTree, idx: usize, depth: usize) -> usize {
    match &tree.nodes[idx] {
        Node::Leaf { .. } => depth,
        Node::Branch { left, right, .. } => {
            let l = tree_max_depth(tree, *left, depth + 1);
            let r = tree_max_depth(tree, *right, depth + 1);
            l.max(r)
        }
    }
}

#[derive(Clone, Debug)]
struct PathItem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

impl PathItem {
    fn empty() -> Self {
        PathItem {
            feature: None,
            zero_fraction: 0.0,
            one_fraction: 0.0,
            pweight: 0.0,
        }
    }
}

fn extend_path(
    path: &mut [PathItem],
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    path[depth] = PathItem {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    if depth == 0 {
        return;
    }
    for i in (0..depth).rev() {
        path[i + 1].pweight +=
            one_fraction * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut [PathItem], depth: usize, index: usize) {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * (depth + 1) as f64
                / ((i + 1) as f64 * one_fraction);
            next_one_portion =
                tmp - path[i].pweight * zero_fraction * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].pweight =
                path[i].pweight * (depth + 1) as f64 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathItem], depth: usize, index: usize) -> f64 {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero_fraction * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].pweight / (zero_fraction * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn tree_shap_recursive(
    tree: &DecisionTree,
    columns: &[Vec<f64>],
    row: usize,
    phi: &mut [f64],
    node_idx: usize,
    path: &mut [PathItem],
    depth: usize,
    parent_zero_fraction: f64,
    parent_one_fraction: f64,
    parent_feature: Option<usize>,
) {
    extend_path(
        path,
        depth,
        parent_zero_fraction,
        parent_one_fraction,
        parent_feature,
    );
    let mut depth = depth;
    match &tree.nodes[node_idx] {
        Node::Leaf { value, .. } => {
            for i in 1..=depth {
                let weight = unwound_path_sum(path, depth, i);
                let item = &path[i];
                phi[item.feature.unwrap()] +=
                    weight * (item.one_fraction - item.zero_fraction) * value;
            }
        }
        Node::Branch {
            feature,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            let goes_left = columns[*feature][row] <= *threshold;
            let (hot, cold) = if goes_left {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero_fraction = tree.nodes[hot].cover() / cover;
            let cold_zero_fraction = tree.nodes[cold].cover() / cover;
            let mut incoming_zero_fraction = 1.0;
            let mut incoming_one_fraction = 1.0;
            // if this feature already sits on the path, unwind it first
            if let Some(i) = (1..=depth).find(|&i| path[i].feature == Some(*feature)) {
                incoming_zero_fraction = path[i].zero_fraction;
                incoming_one_fraction = path[i].one_fraction;
                unwind_path(path, depth, i);
                depth -= 1;
            }
            let (parent_path, child_path) = path.split_at_mut(depth + 1);
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            tree_shap_recursive(
                tree,
                columns,
                row,
                phi,
                hot,
                child_path,
                depth + 1,
                hot_zero_fraction * incoming_zero_fraction,
                incoming_one_fraction,
                Some(*feature),
            );
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            tree_shap_recursive(
                tree,
                columns,
                row,
                phi,
                cold,
                child_path,
                depth + 1,
                cold_zero_fraction * incoming_zero_fraction,
                0.0,
                Some(*feature),
            );
        }
    }
}

fn validate_covers(model: &GbdtModel) -> Result<()> {
    for tree in &model.trees {
        for node in &tree.nodes {
            if !(node.cover() > 0.0) {
                return Err(Error::Evaluation(
                    "attribution requires positive cover metadata on every node".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Exact path-dependent SHAP values for a GBDT model on the margin scale.
pub fn tree_shap(
    model: &GbdtModel,
    columns: &[Vec<f64>],
    target: ShapTarget,
) -> Result<ShapMatrix> {
    let d = model.n_features();
    if columns.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: columns.len(),
        });
    }
    validate_covers(model)?;
    let n = columns.first().map_or(0, |c| c.len());
    let base_value = model.base_score
        + model
            .trees
            .iter()
            .map(|t| tree_expectation(t, 0))
            .sum::<f64>();
    let depths: Vec<usize> = model
        .trees
        .iter()
        .map(|t| tree_max_depth(t, 0, 0) + 2)
        .collect();
    let values: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|row| {
            let mut phi = vec![0.0_f64; d];
            for (tree, &max_depth) in model.trees.iter().zip(&depths) {
                let mut path = vec![PathItem::empty(); max_depth * (max_depth + 1) / 2];
                tree_shap_recursive(
                    tree, columns, row, &mut phi, 0, &mut path, 0, 1.0, 1.0, None,
                );
            }
            phi
        })
        .collect();
    Ok(ShapMatrix {
        values,
        base_value,
        target,
    })
}

/// CATE-level SHAP for a T-learner: values(mu1) - values(mu0) columnwise
/// on the margin (log-odds) scale, where additivity is exact.
pub fn cate_shap(model: &TLearnerModel, columns: &[Vec<f64>]) -> Result<ShapMatrix> {
    if model.mu1.n_features() != model.mu0.n_features() {
        return Err(Error::Dimension {
            expected: model.mu1.n_features(),
            actual: model.mu0.n_features(),
        });
    }
    let shap1 = tree_shap(&model.mu1, columns, ShapTarget::Mu1)?;
    let shap0 = tree_shap(&model.mu0, columns, ShapTarget::Mu0)?;
    let values = shap1
        .values
        .into_iter()
        .zip(shap0.values)
        .map(|(row1, row0)| row1.iter().zip(&row0).map(|(a, b)| a - b).collect())
        .collect();
    Ok(ShapMatrix {
        values,
        base_value: shap1.base_value - shap0.base_value,
        target: ShapTarget::Cate,
    })
}

/// Features ranked by mean |SHAP|, descending; ties break on feature index.
pub fn shap_summary(shap: &ShapMatrix, feature_names: &[String]) -> Vec<(String, f64)> {
    let d = shap.d();
    let n = shap.n().max(1) as f64;
    let mut ranked: Vec<(usize, f64)> = (0..d)
        .map(|j| {
            let mean_abs = shap.values.iter().map(|row| row[j].abs()).sum::<f64>() / n;
            (j, mean_abs)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .map(|(j, v)| {
            let name = feature_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("f{j}"));
            (name, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{quantile_bin, BinningScheme};
    use crate::gbdt::{fit_on_columns, GbdtParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_columns(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect()
    }

    /// Cover-weighted conditional expectation with the features in `subset`
    /// fixed at the record's values and the rest marginalized.
    fn expectation_with_subset(
        tree: &DecisionTree,
        idx: usize,
        columns: &[Vec<f64>],
        row: usize,
        subset: u32,
    ) -> f64 {
        match &tree.nodes[idx] {
            Node::Leaf { value, .. } => *value,
            Node::Branch {
                feature,
                threshold,
                left,
                right,
                cover,
                ..
            } => {
                if subset & (1 << feature) != 0 {
                    let next = if columns[*feature][row] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                    expectation_with_subset(tree, next, columns, row, subset)
                } else {
                    let l = &tree.nodes[*left];
                    let r = &tree.nodes[*right];
                    (l.cover() * expectation_with_subset(tree, *left, columns, row, subset)
                        + r.cover()
                            * expectation_with_subset(tree, *right, columns, row, subset))
                        / cover
                }
            }
        }
    }

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }

    /// Exponential-time Shapley values by enumerating all feature subsets.
    fn brute_force_shapley(model: &GbdtModel, columns: &[Vec<f64>], row: usize) -> Vec<f64> {
        let d = model.n_features();
        let eval = |subset: u32| -> f64 {
            model
                .trees
                .iter()
                .map(|t| expectation_with_subset(t, 0, columns, row, subset))
                .sum::<f64>()
        };
        let mut phi = vec![0.0_f64; d];
        for j in 0..d {
            for subset in 0..(1u32 << d) {
                if subset & (1 << j) != 0 {
                    continue;
                }
                let s = (subset.count_ones()) as usize;
                let weight = factorial(s) * factorial(d - s - 1) / factorial(d);
                phi[j] += weight * (eval(subset | (1 << j)) - eval(subset));
            }
        }
        phi
    }

    fn fitted_small_model(seed: u64, max_leaves: usize, num_trees: usize) -> (GbdtModel, Vec<Vec<f64>>) {
        let cols = random_columns(400, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let y: Vec<f64> = (0..400)
            .map(|i| {
                let p = 0.2 + 0.4 * cols[1][i] + 0.2 * cols[3][i] * cols[0][i];
                (rng.gen::<f64>() < p) as u8 as f64
            })
            .collect();
        let params = GbdtParams {
            num_trees,
            max_leaves,
            min_samples_leaf: 10,
            ..GbdtParams::default()
        };
        let model = fit_on_columns(&cols, &y, None, &params, 255).unwrap();
        (model, cols)
    }

    #[test]
    fn single_leaf_model_has_zero_shap() {
        let cols = random_columns(50, 3, 60);
        let binned = quantile_bin(&cols, 32).unwrap();
        let params = GbdtParams {
            num_trees: 2,
            max_leaves: 2,
            min_samples_leaf: 100, // unattainable: every tree is one leaf
            ..GbdtParams::default()
        };
        let y: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
        let model = crate::gbdt::GbdtModel::fit(&binned, &y, None, &params).unwrap();
        let shap = tree_shap(&model, &cols, ShapTarget::Mu1).unwrap();
        for row in &shap.values {
            assert!(row.iter().all(|&v| v == 0.0));
        }
        let margins = model.predict_margin(&cols).unwrap();
        assert!((shap.base_value - margins[0]).abs() < 1e-12);
    }

    #[test]
    fn stump_attributes_only_its_split_feature() {
        let cols = random_columns(300, 4, 61);
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let y: Vec<f64> = cols[2]
            .iter()
            .map(|&v| (rng.gen::<f64>() < 0.2 + 0.6 * v) as u8 as f64)
            .collect();
        let params = GbdtParams {
            num_trees: 1,
            max_leaves: 2,
            min_samples_leaf: 20,
            ..GbdtParams::default()
        };
        let model = fit_on_columns(&cols, &y, None, &params, 64).unwrap();
        assert!(matches!(
            model.trees[0].nodes[0],
            Node::Branch { feature: 2, .. }
        ));
        let shap = tree_shap(&model, &cols, ShapTarget::Mu1).unwrap();
        for row in &shap.values {
            for (j, &v) in row.iter().enumerate() {
                if j == 2 {
                    continue;
                }
                assert_eq!(v, 0.0, "feature {j} got {v}");
            }
        }
    }

    #[test]
    fn matches_brute_force_on_small_trees() {
        for seed in [70u64, 71, 72] {
            let (model, cols) = fitted_small_model(seed, 8, 3);
            let shap = tree_shap(&model, &cols, ShapTarget::Mu1).unwrap();
            let margins = model.predict_margin(&cols).unwrap();
            for row in (0..cols[0].len()).step_by(37) {
                let brute = brute_force_shapley(&model, &cols, row);
                for j in 0..4 {
                    assert!(
                        (shap.values[row][j] - brute[j]).abs() < 1e-9,
                        "seed {seed} row {row} feature {j}: {} vs {}",
                        shap.values[row][j],
                        brute[j]
                    );
                }
                let total: f64 = shap.base_value + shap.values[row].iter().sum::<f64>();
                assert!(
                    (total - margins[row]).abs() < 1e-9,
                    "local accuracy: {total} vs {}",
                    margins[row]
                );
            }
        }
    }

    #[test]
    fn local_accuracy_on_larger_model() {
        let cols = random_columns(1_000, 6, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let y: Vec<f64> = (0..1_000)
            .map(|i| (rng.gen::<f64>() < 0.1 + 0.5 * cols[4][i]) as u8 as f64)
            .collect();
        let params = GbdtParams {
            num_trees: 40,
            ..GbdtParams::default()
        };
        let model = fit_on_columns(&cols, &y, None, &params, 128).unwrap();
        let shap = tree_shap(&model, &cols, ShapTarget::Mu1).unwrap();
        let margins = model.predict_margin(&cols).unwrap();
        for row in (0..1_000).step_by(111) {
            let total: f64 = shap.base_value + shap.values[row].iter().sum::<f64>();
            assert!(
                (total - margins[row]).abs() < 1e-9,
                "row {row}: {total} vs {}",
                margins[row]
            );
        }
    }

    #[test]
    fn identical_arm_models_give_zero_cate_shap() {
        let (model, cols) = fitted_small_model(90, 6, 4);
        let t_model = TLearnerModel {
            mu1: model.clone(),
            mu0: model,
        };
        let shap = cate_shap(&t_model, &cols).unwrap();
        assert_eq!(shap.base_value, 0.0);
        for row in &shap.values {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn missing_cover_metadata_is_attribution_error() {
        let model = GbdtModel {
            params: GbdtParams::default(),
            base_score: 0.0,
            trees: vec![DecisionTree {
                nodes: vec![
                    Node::Branch {
                        feature: 0,
                        bin: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                        cover: 0.0,
                    },
                    Node::Leaf {
                        value: 1.0,
                        cover: 0.0,
                    },
                    Node::Leaf {
                        value: -1.0,
                        cover: 0.0,
                    },
                ],
            }],
            binning: BinningScheme::fit(&[vec![0.0, 1.0]], 2).unwrap(),
            train_loss: vec![],
        };
        assert!(tree_shap(&model, &[vec![0.3]], ShapTarget::Mu1).is_err());
    }

    #[test]
    fn summary_ranks_by_mean_abs_with_index_ties() {
        let shap = ShapMatrix {
            values: vec![vec![0.0, 0.5, -0.5, 0.1], vec![0.0, -0.5, 0.5, 0.3]],
            base_value: 0.0,
            target: ShapTarget::Cate,
        };
        let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let ranking = shap_summary(&shap, &names);
        assert_eq!(ranking[0].0, "f1"); // tied with f2 at 0.5, lower index first
        assert_eq!(ranking[1].0, "f2");
        assert_eq!(ranking[2].0, "f3");
        assert_eq!(ranking[3].0, "f0");
        assert_eq!(ranking[3].1, 0.0);
    }

    #[test]
    fn column_permutation_permutes_shap_columns() {
        let cols = random_columns(500, 4, 95);
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let y: Vec<f64> = (0..500)
            .map(|i| (rng.gen::<f64>() < 0.2 + 0.5 * cols[1][i]) as u8 as f64)
            .collect();
        let params = GbdtParams {
            num_trees: 10,
            max_leaves: 8,
            min_samples_leaf: 10,
            ..GbdtParams::default()
        };
        let model = fit_on_columns(&cols, &y, None, &params, 128).unwrap();
        let shap = tree_shap(&model, &cols, ShapTarget::Mu1).unwrap();

        let perm = [2usize, 0, 3, 1]; // permuted[j] = original[perm[j]]
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&j| cols[j].clone()).collect();
        let model_p = fit_on_columns(&permuted, &y, None, &params, 128).unwrap();
        let shap_p = tree_shap(&model_p, &permuted, ShapTarget::Mu1).unwrap();
        assert_eq!(shap.base_value, shap_p.base_value);
        for row in (0..500).step_by(53) {
            for (new_j, &orig_j) in perm.iter().enumerate() {
                assert_eq!(
                    shap.values[row][orig_j], shap_p.values[row][new_j],
                    "row {row} feature {orig_j}"
                );
            }
        }
    }
}

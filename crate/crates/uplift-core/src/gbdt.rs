//! Histogram-based gradient-boosted decision trees with second-order
//! (gradient + hessian) boosting and leaf-wise growth.
//!
//! Split gain uses Gl^2/(Hl+l2) + Gr^2/(Hr+l2) - (Gl+Gr)^2/(Hl+Hr+l2);
//! leaf values are -G/(H+l2), stored pre-scaled by the learning rate so a
//! prediction is base_score plus the plain sum of leaf values along each
//! tree's routing.
//!
//! Determinism: histograms accumulate per feature over records in a fixed
//! canonical order, per-feature results reduce in ascending feature index,
//! and ties between equal-gain splits resolve to the lowest feature index,
//! then the lowest bin threshold. Sample weights are normalized to mean 1
//! at entry, which makes fits invariant to a global rescaling of weights.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{BinnedMatrix, BinningScheme};
use crate::error::{Error, Result};
use crate::logistic::sigmoid;
use crate::seeding::{derive_seed, domains};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtParams {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub l2_reg: f64,
    pub loss: Loss,
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_trees: 200,
            learning_rate: 0.1,
            max_leaves: 31,
            min_samples_leaf: 20,
            l2_reg: 1.0,
            loss: Loss::Logistic,
            feature_subsample: 1.0,
            seed: 42,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees < 1 {
            return Err(Error::Parameter("num_trees must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Parameter("learning_rate must lie in (0,1]".into()));
        }
        if self.max_leaves < 2 {
            return Err(Error::Parameter("max_leaves must be >= 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::Parameter("min_samples_leaf must be >= 1".into()));
        }
        if self.l2_reg < 0.0 {
            return Err(Error::Parameter("l2_reg must be >= 0".into()));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(Error::Parameter("feature_subsample must lie in (0,1]".into()));
        }
        Ok(())
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }
}

/// Tree node. Branches route left when x[feature] <= threshold, which is
/// bit-equivalent to bin(x) <= bin. Every node stores its cover (the
/// weighted sample count seen at fit time); TreeSHAP depends on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Branch {
        feature: usize,
        bin: u16,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Branch { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Route a record through raw feature columns.
    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Branch {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if columns[*feature][row] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Route a record through bin codes (training-time path).
    fn predict_code_row(&self, binned: &BinnedMatrix, row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value, .. } => return *value,
                Node::Branch {
                    feature,
                    bin,
                    left,
                    right,
                    ..
                } => {
                    idx = if (binned.codes(*feature)[row] as u16) <= *bin {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub params: GbdtParams,
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
    pub binning: BinningScheme,
    /// Weighted mean training loss; entry 0 is the base-score loss,
    /// entry k the loss after round k.
    pub train_loss: Vec<f64>,
}

struct GradHess {
    g: Vec<f64>,
    h: Vec<f64>,
}

fn loss_value(loss: Loss, margins: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    match loss {
        Loss::Logistic => {
            for i in 0..y.len() {
                let m = margins[i];
                // -[y*m - softplus(m)] computed stably
                let sp = if m > 30.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                };
                total += w[i] * (sp - y[i] * m);
                wsum += w[i];
            }
        }
        Loss::Squared => {
            for i in 0..y.len() {
                let r = margins[i] - y[i];
                total += w[i] * r * r;
                wsum += w[i];
            }
        }
    }
    total / wsum
}

fn grad_hess(loss: Loss, margins: &[f64], y: &[f64], w: &[f64], out: &mut GradHess) {
    match loss {
        Loss::Logistic => {
            for i in 0..y.len() {
                let p = sigmoid(margins[i]);
                out.g[i] = w[i] * (p - y[i]);
                out.h[i] = w[i] * p * (1.0 - p);
            }
        }
        Loss::Squared => {
            for i in 0..y.len() {
                out.g[i] = w[i] * (margins[i] - y[i]);
                out.h[i] = w[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitEval {
    gain: f64,
    feature: usize,
    bin: u16,
}

struct LeafState {
    node: usize,
    start: usize,
    len: usize,
    sum_g: f64,
    sum_h: f64,
    sum_w: f64,
    best: Option<Option<SplitEval>>,
}

fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l2: f64) -> f64 {
    let gt = gl + gr;
    let ht = hl + hr;
    gl * gl / (hl + l2) + gr * gr / (hr + l2) - gt * gt / (ht + l2)
}

fn leaf_value(g: f64, h: f64, l2: f64, learning_rate: f64) -> f64 {
    if h + l2 > 0.0 {
        -learning_rate * g / (h + l2)
    } else {
        0.0
    }
}

struct TreeGrower<'a> {
    binned: &'a BinnedMatrix,
    g: &'a [f64],
    h: &'a [f64],
    w: &'a [f64],
    params: &'a GbdtParams,
    features: Vec<usize>,
    index: Vec<u32>,
}

impl<'a> TreeGrower<'a> {
    fn best_split_for_feature(&self, feature: usize, leaf: &LeafState) -> Option<SplitEval> {
        let n_bins = self.binned.scheme().n_bins(feature);
        if n_bins < 2 {
            return None;
        }
        let codes = self.binned.codes(feature);
        let mut hist_g = vec![0.0_f64; n_bins];
        let mut hist_h = vec![0.0_f64; n_bins];
        let mut hist_w = vec![0.0_f64; n_bins];
        let mut hist_c = vec![0u32; n_bins];
        for &rec in &self.index[leaf.start..leaf.start + leaf.len] {
            let r = rec as usize;
            let b = codes[r] as usize;
            hist_g[b] += self.g[r];
            hist_h[b] += self.h[r];
            hist_w[b] += self.w[r];
            hist_c[b] += 1;
        }
        let min_cover = self.params.min_samples_leaf as f64;
        let mut best: Option<SplitEval> = None;
        let mut gl = 0.0;
        let mut hl = 0.0;
        let mut wl = 0.0;
        let mut cl = 0u32;
        // split at bin b sends bins <= b left; the last bin is no split
        for b in 0..n_bins - 1 {
            gl += hist_g[b];
            hl += hist_h[b];
            wl += hist_w[b];
            cl += hist_c[b];
            let wr = leaf.sum_w - wl;
            let cr = leaf.len as u32 - cl;
            if cl == 0 || cr == 0 || wl < min_cover || wr < min_cover {
                continue;
            }
            let gain = split_gain(gl, hl, leaf.sum_g - gl, leaf.sum_h - hl, self.params.l2_reg);
            if gain > best.map_or(0.0, |s| s.gain) {
                best = Some(SplitEval {
                    gain,
                    feature,
                    bin: b as u16,
                });
            }
        }
        best
    }

    fn eval_leaf(&self, leaf: &LeafState) -> Option<SplitEval> {
        if leaf.len < 2 {
            return None;
        }
        let candidates: Vec<Option<SplitEval>> = self
            .features
            .par_iter()
            .map(|&f| self.best_split_for_feature(f, leaf))
            .collect();
        // reduce in ascending feature order; strict > keeps the lowest
        // feature index, and within a feature the scan kept the lowest bin
        let mut best: Option<SplitEval> = None;
        for cand in candidates.into_iter().flatten() {
            if cand.gain > best.map_or(0.0, |s| s.gain) {
                best = Some(cand);
            }
        }
        best
    }

    fn range_sums(&self, start: usize, len: usize) -> (f64, f64, f64) {
        let mut sg = 0.0;
        let mut sh = 0.0;
        let mut sw = 0.0;
        for &rec in &self.index[start..start + len] {
            let r = rec as usize;
            sg += self.g[r];
            sh += self.h[r];
            sw += self.w[r];
        }
        (sg, sh, sw)
    }

    fn grow(&mut self) -> DecisionTree {
        let n = self.index.len();
        let mut nodes: Vec<Node> = vec![Node::Leaf {
            value: 0.0,
            cover: 0.0,
        }];
        let (sg, sh, sw) = self.range_sums(0, n);
        let mut leaves = vec![LeafState {
            node: 0,
            start: 0,
            len: n,
            sum_g: sg,
            sum_h: sh,
            sum_w: sw,
            best: None,
        }];
        let mut scratch_left: Vec<u32> = Vec::with_capacity(n);
        let mut scratch_right: Vec<u32> = Vec::with_capacity(n);
        while leaves.len() < self.params.max_leaves {
            for leaf in leaves.iter_mut() {
                if leaf.best.is_none() {
                    let eval = {
                        let leaf_ref: &LeafState = leaf;
                        self.eval_leaf(leaf_ref)
                    };
                    leaf.best = Some(eval);
                }
            }
            let mut chosen: Option<usize> = None;
            let mut best_gain = 0.0;
            for (i, leaf) in leaves.iter().enumerate() {
                if let Some(Some(se)) = leaf.best {
                    if se.gain > best_gain {
                        best_gain = se.gain;
                        chosen = Some(i);
                    }
                }
            }
            let Some(i) = chosen else { break };
            let leaf = leaves.remove(i);
            let se = leaf.best.unwrap().unwrap();
            // stable partition of the leaf's record range
            scratch_left.clear();
            scratch_right.clear();
            let codes = self.binned.codes(se.feature);
            for &rec in &self.index[leaf.start..leaf.start + leaf.len] {
                if (codes[rec as usize] as u16) <= se.bin {
                    scratch_left.push(rec);
                } else {
                    scratch_right.push(rec);
                }
            }
            let left_len = scratch_left.len();
            let right_len = scratch_right.len();
            self.index[leaf.start..leaf.start + left_len].copy_from_slice(&scratch_left);
            self.index[leaf.start + left_len..leaf.start + leaf.len]
                .copy_from_slice(&scratch_right);

            let left_node = nodes.len();
            let right_node = nodes.len() + 1;
            nodes.push(Node::Leaf {
                value: 0.0,
                cover: 0.0,
            });
            nodes.push(Node::Leaf {
                value: 0.0,
                cover: 0.0,
            });
            nodes[leaf.node] = Node::Branch {
                feature: se.feature,
                bin: se.bin,
                threshold: self.binned.scheme().threshold(se.feature, se.bin as usize),
                left: left_node,
                right: right_node,
                cover: leaf.sum_w,
            };
            let (lg, lh, lw) = self.range_sums(leaf.start, left_len);
            let (rg, rh, rw) = self.range_sums(leaf.start + left_len, right_len);
            leaves.push(LeafState {
                node: left_node,
                start: leaf.start,
                len: left_len,
                sum_g: lg,
                sum_h: lh,
                sum_w: lw,
                best: None,
            });
            leaves.push(LeafState {
                node: right_node,
                start: leaf.start + left_len,
                len: right_len,
                sum_g: rg,
                sum_h: rh,
                sum_w: rw,
                best: None,
            });
        }
        for leaf in &leaves {
            nodes[leaf.node] = Node::Leaf {
                value: leaf_value(
                    leaf.sum_g,
                    leaf.sum_h,
                    self.params.l2_reg,
                    self.params.learning_rate,
                ),
                cover: leaf.sum_w,
            };
        }
        DecisionTree { nodes }
    }
}

impl GbdtModel {
    /// Fit a boosted ensemble on pre-binned features.
    pub fn fit(
        binned: &BinnedMatrix,
        y: &[f64],
        weights: Option<&[f64]>,
        params: &GbdtParams,
    ) -> Result<Self> {
        params.validate()?;
        let n = binned.n();
        let d = binned.n_features();
        if n == 0 || d == 0 {
            return Err(Error::Parameter("empty training input".into()));
        }
        if y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: y.len(),
            });
        }
        if params.loss == Loss::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Parameter("logistic loss requires a 0/1 target".into()));
        }
        let w: Vec<f64> = match weights {
            Some(raw) => {
                if raw.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        actual: raw.len(),
                    });
                }
                if raw.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::Parameter("weights must be finite and >= 0".into()));
                }
                let sum: f64 = raw.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::Parameter("weights must have positive sum".into()));
                }
                // normalize to mean 1: makes the fit invariant to global
                // weight rescaling and keeps covers on the count scale
                let scale = n as f64 / sum;
                raw.iter().map(|&v| v * scale).collect()
            }
            None => vec![1.0; n],
        };
        let wsum: f64 = w.iter().sum();
        let ybar = y.iter().zip(&w).map(|(&yi, &wi)| yi * wi).sum::<f64>() / wsum;
        let base_score = match params.loss {
            Loss::Logistic => {
                if !(ybar > 0.0 && ybar < 1.0) {
                    return Err(Error::Parameter(
                        "logistic loss requires both classes in the target".into(),
                    ));
                }
                (ybar / (1.0 - ybar)).ln()
            }
            Loss::Squared => ybar,
        };

        let mut margins = vec![base_score; n];
        let mut gh = GradHess {
            g: vec![0.0; n],
            h: vec![0.0; n],
        };
        let mut train_loss = Vec::with_capacity(params.num_trees + 1);
        train_loss.push(loss_value(params.loss, &margins, y, &w));
        let mut trees = Vec::with_capacity(params.num_trees);
        let all_features: Vec<usize> = (0..d).collect();
        for round in 0..params.num_trees {
            grad_hess(params.loss, &margins, y, &w, &mut gh);
            let features = if params.feature_subsample < 1.0 {
                let k = ((params.feature_subsample * d as f64).round() as usize)
                    .clamp(1, d);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    params.seed,
                    domains::GBDT_TREE,
                    round as u64,
                ));
                let mut pool = all_features.clone();
                pool.shuffle(&mut rng);
                let mut chosen = pool[..k].to_vec();
                chosen.sort_unstable();
                chosen
            } else {
                all_features.clone()
            };
            let mut grower = TreeGrower {
                binned,
                g: &gh.g,
                h: &gh.h,
                w: &w,
                params,
                features,
                index: (0..n as u32).collect(),
            };
            let tree = grower.grow();
            for (i, m) in margins.iter_mut().enumerate() {
                *m += tree.predict_code_row(binned, i);
            }
            train_loss.push(loss_value(params.loss, &margins, y, &w));
            trees.push(tree);
        }
        Ok(GbdtModel {
            params: params.clone(),
            base_score,
            trees,
            binning: binned.scheme().clone(),
            train_loss,
        })
    }

    pub fn n_features(&self) -> usize {
        self.binning.n_features()
    }

    /// Raw margin predictions (log-odds for logistic loss).
    pub fn predict_margin(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        if columns.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                actual: columns.len(),
            });
        }
        let n = columns.first().map_or(0, |c| c.len());
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut m = self.base_score;
                for tree in &self.trees {
                    m += tree.predict_row(columns, i);
                }
                m
            })
            .collect())
    }

    /// Probability-scale predictions for logistic loss, raw values for
    /// squared loss.
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        let margins = self.predict_margin(columns)?;
        Ok(match self.params.loss {
            Loss::Logistic => margins.into_iter().map(sigmoid).collect(),
            Loss::Squared => margins,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Bin raw columns and fit in one step.
pub fn fit_on_columns(
    columns: &[Vec<f64>],
    y: &[f64],
    weights: Option<&[f64]>,
    params: &GbdtParams,
    max_bins: usize,
) -> Result<GbdtModel> {
    let binned = crate::binning::quantile_bin(columns, max_bins)?;
    GbdtModel::fit(&binned, y, weights, params)
}

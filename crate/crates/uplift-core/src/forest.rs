//! Honest causal forest with percentile-bootstrap confidence intervals.
//!
//! Each tree draws a subsample without replacement and splits it into a
//! structure half (chooses splits) and an estimation half (populates leaf
//! effect estimates); no record serves both roles in the same tree. The
//! split criterion is the causal-tree heterogeneity objective: maximize
//! sum over children of n_child * tau_child^2, computed on the structure
//! half, with per-arm minimum counts enforced on both halves so every
//! retained leaf carries a well-defined estimate.
//!
//! Confidence intervals come from R independent forest replicates, each
//! trained on a bootstrap resample: per record, the point estimate is the
//! replicate mean and the interval the 2.5/97.5 replicate percentiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{BinnedMatrix, BinningScheme};
use crate::data::{strata_indices, UpliftDataset};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, domains};

/// Histogram resolution for forest split finding.
pub const FOREST_MAX_BINS: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HonestTreeParams {
    pub num_trees: usize,
    /// Per-tree subsample fraction (without replacement).
    pub subsample_fraction: f64,
    /// Share of each tree's subsample used to choose splits; the rest
    /// populates leaf estimates.
    pub honesty_fraction: f64,
    pub max_leaves: usize,
    pub min_treated_leaf: usize,
    pub min_control_leaf: usize,
    pub seed: u64,
}

impl Default for HonestTreeParams {
    fn default() -> Self {
        HonestTreeParams {
            num_trees: 50,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            max_leaves: 16,
            min_treated_leaf: 10,
            min_control_leaf: 10,
            seed: 7,
        }
    }
}

impl HonestTreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_trees < 1 {
            return Err(Error::Parameter("num_trees must be >= 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Parameter(
                "subsample_fraction must lie in (0,1]".into(),
            ));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(Error::Parameter("honesty_fraction must lie in (0,1)".into()));
        }
        if self.max_leaves < 2 {
            return Err(Error::Parameter("max_leaves must be >= 2".into()));
        }
        if self.min_treated_leaf < 1 || self.min_control_leaf < 1 {
            return Err(Error::Parameter(
                "per-arm leaf minimums must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CfNode {
    Branch {
        feature: usize,
        bin: u16,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        tau: f64,
        treated_mean: f64,
        control_mean: f64,
        treated_count: usize,
        control_count: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HonestTree {
    pub nodes: Vec<CfNode>,
    /// True when no valid root split existed; the single leaf is then
    /// populated from the full subsample (difference in means).
    pub degenerate: bool,
}

impl HonestTree {
    pub fn predict_row(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                CfNode::Leaf { tau, .. } => return *tau,
                CfNode::Branch {
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
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalForestModel {
    pub params: HonestTreeParams,
    pub trees: Vec<HonestTree>,
    pub binning: BinningScheme,
    pub degenerate_trees: usize,
}

/// Per-record 95% interval around the forest point estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CateInterval {
    pub tau_hat: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Stratified subsample preserving the joint (treatment, outcome) strata
/// proportions. Deterministic per seed; fraction 1.0 returns the dataset
/// unchanged.
pub fn cf_subsample(ds: &UpliftDataset, fraction: f64, seed: u64) -> Result<UpliftDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "subsample fraction must lie in (0,1], got {fraction}"
        )));
    }
    let strata = strata_indices(ds.treatment(), ds.outcome());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (s, members) in strata.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let k = (fraction * members.len() as f64).round() as usize;
        let k = k.min(members.len());
        if k == 0 {
            let (t, y) = crate::data::stratum_label(s);
            return Err(Error::Fit(format!(
                "stratum (treatment={t}, outcome={y}) becomes empty under fraction {fraction}"
            )));
        }
        let mut order = members.clone();
        partial_shuffle(&mut order, k, &mut rng);
        chosen.extend_from_slice(&order[..k]);
    }
    chosen.sort_unstable();
    ds.subset(&chosen)
}

/// Fisher-Yates prefix shuffle: after the call, the first k entries are a
/// uniform sample without replacement.
fn partial_shuffle<T>(items: &mut [T], k: usize, rng: &mut ChaCha8Rng) {
    let n = items.len();
    for i in 0..k.min(n.saturating_sub(1)) {
        let j = rng.gen_range(i..n);
        items.swap(i, j);
    }
}

/// Arm-wise counts and outcome sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ArmStats {
    nt: f64,
    st: f64,
    nc: f64,
    sc: f64,
}

impl ArmStats {
    fn add(&mut self, treated: bool, y: f64) {
        if treated {
            self.nt += 1.0;
            self.st += y;
        } else {
            self.nc += 1.0;
            self.sc += y;
        }
    }

    fn minus(&self, other: &ArmStats) -> ArmStats {
        ArmStats {
            nt: self.nt - other.nt,
            st: self.st - other.st,
            nc: self.nc - other.nc,
            sc: self.sc - other.sc,
        }
    }

    fn n(&self) -> f64 {
        self.nt + self.nc
    }

    fn tau(&self) -> f64 {
        self.st / self.nt - self.sc / self.nc
    }
}

#[derive(Debug, Clone, Copy)]
struct CfSplit {
    improvement: f64,
    feature: usize,
    bin: u16,
}

struct CfLeafState {
    node: usize,
    s_start: usize,
    s_len: usize,
    e_start: usize,
    e_len: usize,
    s_stats: ArmStats,
    e_stats: ArmStats,
    best: Option<Option<CfSplit>>,
}

struct CfGrower<'a> {
    binned: &'a BinnedMatrix,
    treatment: &'a [u8],
    outcome_f: &'a [f64],
    params: &'a HonestTreeParams,
    index_s: Vec<u32>,
    index_e: Vec<u32>,
}

impl<'a> CfGrower<'a> {
    fn range_stats(&self, index: &[u32], start: usize, len: usize) -> ArmStats {
        let mut stats = ArmStats::default();
        for &rec in &index[start..start + len] {
            let r = rec as usize;
            stats.add(self.treatment[r] == 1, self.outcome_f[r]);
        }
        stats
    }

    fn arm_minimums_ok(&self, s: &ArmStats, e: &ArmStats) -> bool {
        let mt = self.params.min_treated_leaf as f64;
        let mc = self.params.min_control_leaf as f64;
        s.nt >= mt && s.nc >= mc && e.nt >= mt && e.nc >= mc
    }

    fn best_split_for_feature(&self, feature: usize, leaf: &CfLeafState) -> Option<CfSplit> {
        let n_bins = self.binned.scheme().n_bins(feature);
        if n_bins < 2 {
            return None;
        }
        let codes = self.binned.codes(feature);
        let mut hist_s = vec![ArmStats::default(); n_bins];
        let mut hist_e = vec![ArmStats::default(); n_bins];
        for &rec in &self.index_s[leaf.s_start..leaf.s_start + leaf.s_len] {
            let r = rec as usize;
            hist_s[codes[r] as usize].add(self.treatment[r] == 1, self.outcome_f[r]);
        }
        for &rec in &self.index_e[leaf.e_start..leaf.e_start + leaf.e_len] {
            let r = rec as usize;
            hist_e[codes[r] as usize].add(self.treatment[r] == 1, self.outcome_f[r]);
        }
        let parent_value = leaf.s_stats.n() * leaf.s_stats.tau().powi(2);
        let mut best: Option<CfSplit> = None;
        let mut left_s = ArmStats::default();
        let mut left_e = ArmStats::default();
        for b in 0..n_bins - 1 {
            left_s.nt += hist_s[b].nt;
            left_s.st += hist_s[b].st;
            left_s.nc += hist_s[b].nc;
            left_s.sc += hist_s[b].sc;
            left_e.nt += hist_e[b].nt;
            left_e.st += hist_e[b].st;
            left_e.nc += hist_e[b].nc;
            left_e.sc += hist_e[b].sc;
            let right_s = leaf.s_stats.minus(&left_s);
            let right_e = leaf.e_stats.minus(&left_e);
            if !self.arm_minimums_ok(&left_s, &left_e)
                || !self.arm_minimums_ok(&right_s, &right_e)
            {
                continue;
            }
            let value = left_s.n() * left_s.tau().powi(2) + right_s.n() * right_s.tau().powi(2);
            let improvement = value - parent_value;
            if improvement > best.map_or(0.0, |s| s.improvement) {
                best = Some(CfSplit {
                    improvement,
                    feature,
                    bin: b as u16,
                });
            }
        }
        best
    }

    fn eval_leaf(&self, leaf: &CfLeafState) -> Option<CfSplit> {
        let candidates: Vec<Option<CfSplit>> = (0..self.binned.n_features())
            .into_par_iter()
            .map(|f| self.best_split_for_feature(f, leaf))
            .collect();
        let mut best: Option<CfSplit> = None;
        for cand in candidates.into_iter().flatten() {
            if cand.improvement > best.map_or(0.0, |s| s.improvement) {
                best = Some(cand);
            }
        }
        best
    }

    fn partition(
        index: &mut [u32],
        start: usize,
        len: usize,
        codes: &[u8],
        bin: u16,
        scratch_left: &mut Vec<u32>,
        scratch_right: &mut Vec<u32>,
    ) -> usize {
        scratch_left.clear();
        scratch_right.clear();
        for &rec in &index[start..start + len] {
            if (codes[rec as usize] as u16) <= bin {
                scratch_left.push(rec);
            } else {
                scratch_right.push(rec);
            }
        }
        let left_len = scratch_left.len();
        index[start..start + left_len].copy_from_slice(scratch_left);
        index[start + left_len..start + len].copy_from_slice(scratch_right);
        left_len
    }

    fn leaf_node(stats: &ArmStats) -> CfNode {
        let treated_mean = if stats.nt > 0.0 { stats.st / stats.nt } else { 0.0 };
        let control_mean = if stats.nc > 0.0 { stats.sc / stats.nc } else { 0.0 };
        let tau = if stats.nt > 0.0 && stats.nc > 0.0 {
            treated_mean - control_mean
        } else {
            0.0
        };
        CfNode::Leaf {
            tau,
            treated_mean,
            control_mean,
            treated_count: stats.nt as usize,
            control_count: stats.nc as usize,
        }
    }

    fn grow(&mut self) -> HonestTree {
        let placeholder = CfNode::Leaf {
            tau: 0.0,
            treated_mean: 0.0,
            control_mean: 0.0,
            treated_count: 0,
            control_count: 0,
        };
        let mut nodes = vec![placeholder.clone()];
        let s_stats = self.range_stats(&self.index_s, 0, self.index_s.len());
        let e_stats = self.range_stats(&self.index_e, 0, self.index_e.len());
        let mut leaves = vec![CfLeafState {
            node: 0,
            s_start: 0,
            s_len: self.index_s.len(),
            e_start: 0,
            e_len: self.index_e.len(),
            s_stats,
            e_stats,
            best: None,
        }];
        let mut scratch_left = Vec::new();
        let mut scratch_right = Vec::new();
        while leaves.len() < self.params.max_leaves {
            for leaf in leaves.iter_mut() {
                if leaf.best.is_none() {
                    let eval = {
                        let leaf_ref: &CfLeafState = leaf;
                        // a leaf with an undefined structure-half estimate
                        // cannot produce a valid criterion
                        if leaf_ref.s_stats.nt == 0.0 || leaf_ref.s_stats.nc == 0.0 {
                            None
                        } else {
                            self.eval_leaf(leaf_ref)
                        }
                    };
                    leaf.best = Some(eval);
                }
            }
            let mut chosen: Option<usize> = None;
            let mut best_improvement = 0.0;
            for (i, leaf) in leaves.iter().enumerate() {
                if let Some(Some(se)) = leaf.best {
                    if se.improvement > best_improvement {
                        best_improvement = se.improvement;
                        chosen = Some(i);
                    }
                }
            }
            let Some(i) = chosen else { break };
            let leaf = leaves.remove(i);
            let se = leaf.best.unwrap().unwrap();
            let codes = self.binned.codes(se.feature);
            let (index_s, index_e) = (&mut self.index_s, &mut self.index_e);
            let s_left_len = Self::partition(
                index_s,
                leaf.s_start,
                leaf.s_len,
                codes,
                se.bin,
                &mut scratch_left,
                &mut scratch_right,
            );
            let e_left_len = Self::partition(
                index_e,
                leaf.e_start,
                leaf.e_len,
                codes,
                se.bin,
                &mut scratch_left,
                &mut scratch_right,
            );
            let left_node = nodes.len();
            let right_node = nodes.len() + 1;
            nodes.push(placeholder.clone());
            nodes.push(placeholder.clone());
            nodes[leaf.node] = CfNode::Branch {
                feature: se.feature,
                bin: se.bin,
                threshold: self.binned.scheme().threshold(se.feature, se.bin as usize),
                left: left_node,
                right: right_node,
            };
            let ls = self.range_stats(&self.index_s, leaf.s_start, s_left_len);
            let le = self.range_stats(&self.index_e, leaf.e_start, e_left_len);
            leaves.push(CfLeafState {
                node: left_node,
                s_start: leaf.s_start,
                s_len: s_left_len,
                e_start: leaf.e_start,
                e_len: e_left_len,
                s_stats: ls,
                e_stats: le,
                best: None,
            });
            leaves.push(CfLeafState {
                node: right_node,
                s_start: leaf.s_start + s_left_len,
                s_len: leaf.s_len - s_left_len,
                e_start: leaf.e_start + e_left_len,
                e_len: leaf.e_len - e_left_len,
                s_stats: leaf.s_stats.minus(&ls),
                e_stats: leaf.e_stats.minus(&le),
                best: None,
            });
        }
        let degenerate = nodes.len() == 1;
        if degenerate {
            // no valid split: estimate from the full subsample
            let mut full = self.range_stats(&self.index_s, 0, self.index_s.len());
            let e = self.range_stats(&self.index_e, 0, self.index_e.len());
            full.nt += e.nt;
            full.st += e.st;
            full.nc += e.nc;
            full.sc += e.sc;
            nodes[0] = Self::leaf_node(&full);
        } else {
            for leaf in &leaves {
                nodes[leaf.node] = Self::leaf_node(&leaf.e_stats);
            }
        }
        HonestTree { nodes, degenerate }
    }
}

fn fit_trees(
    binned: &BinnedMatrix,
    treatment: &[u8],
    outcome_f: &[f64],
    rows: &[u32],
    params: &HonestTreeParams,
) -> Result<CausalForestModel> {
    params.validate()?;
    let trees: Vec<HonestTree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                params.seed,
                domains::FOREST_TREE,
                t as u64,
            ));
            let mut pool = rows.to_vec();
            let m = ((params.subsample_fraction * pool.len() as f64).round() as usize)
                .clamp(2, pool.len());
            partial_shuffle(&mut pool, m, &mut rng);
            let structure_len = ((params.honesty_fraction * m as f64).round() as usize)
                .clamp(1, m - 1);
            let index_s = pool[..structure_len].to_vec();
            let index_e = pool[structure_len..m].to_vec();
            debug_assert_eq!(index_s.len() + index_e.len(), m);
            let mut grower = CfGrower {
                binned,
                treatment,
                outcome_f,
                params,
                index_s,
                index_e,
            };
            grower.grow()
        })
        .collect();
    let degenerate_trees = trees.iter().filter(|t| t.degenerate).count();
    Ok(CausalForestModel {
        params: params.clone(),
        trees,
        binning: binned.scheme().clone(),
        degenerate_trees,
    })
}

impl CausalForestModel {
    pub fn fit(ds: &UpliftDataset, params: &HonestTreeParams) -> Result<Self> {
        params.validate()?;
        let treated = ds.treatment().iter().filter(|&&t| t == 1).count();
        if treated == 0 || treated == ds.n() {
            return Err(Error::Fit(
                "both treatment arms must be present to fit a causal forest".into(),
            ));
        }
        let needed = 4 * (params.min_treated_leaf + params.min_control_leaf);
        if ds.n() < needed {
            return Err(Error::Fit(format!(
                "need at least {needed} rows for the configured leaf minimums, got {}",
                ds.n()
            )));
        }
        let binned = BinningScheme::fit(ds.features(), FOREST_MAX_BINS)?.encode(ds.features())?;
        let rows: Vec<u32> = (0..ds.n() as u32).collect();
        fit_trees(&binned, ds.treatment(), &ds.outcome_f64(), &rows, params)
    }

    /// Mean over trees of the routed leaf effect estimate.
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        if columns.len() != self.binning.n_features() {
            return Err(Error::Dimension {
                expected: self.binning.n_features(),
                actual: columns.len(),
            });
        }
        let n = columns.first().map_or(0, |c| c.len());
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(columns, i)).sum();
                sum / self.trees.len() as f64
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub const MIN_REPLICATES: usize = 20;
pub const DEFAULT_REPLICATES: usize = 50;
pub const CI_LEVEL: f64 = 0.95;

/// Forest replicates trained on independent bootstrap resamples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalForestEnsemble {
    pub replicates: Vec<CausalForestModel>,
}

impl CausalForestEnsemble {
    pub fn fit_bootstrap(
        ds: &UpliftDataset,
        params: &HonestTreeParams,
        n_replicates: usize,
    ) -> Result<Self> {
        if n_replicates < MIN_REPLICATES {
            return Err(Error::Parameter(format!(
                "need at least {MIN_REPLICATES} bootstrap replicates for interval quality, got {n_replicates}"
            )));
        }
        params.validate()?;
        let treated = ds.treatment().iter().filter(|&&t| t == 1).count();
        if treated == 0 || treated == ds.n() {
            return Err(Error::Fit(
                "both treatment arms must be present to fit a causal forest".into(),
            ));
        }
        let binned = BinningScheme::fit(ds.features(), FOREST_MAX_BINS)?.encode(ds.features())?;
        let outcome_f = ds.outcome_f64();
        let n = ds.n();
        let replicates: Vec<CausalForestModel> = (0..n_replicates)
            .into_par_iter()
            .map(|r| {
                let rep_seed =
                    derive_seed(params.seed, domains::FOREST_REPLICATE, r as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
                let rows: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
                let rep_params = HonestTreeParams {
                    seed: rep_seed,
                    ..params.clone()
                };
                fit_trees(&binned, ds.treatment(), &outcome_f, &rows, &rep_params)
            })
            .collect::<Result<_>>()?;
        Ok(CausalForestEnsemble { replicates })
    }

    /// Ensemble point estimates (mean over replicates).
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Vec<f64>> {
        let per_replicate = self.replicate_predictions(columns)?;
        let n = per_replicate[0].len();
        let r = per_replicate.len() as f64;
        Ok((0..n)
            .map(|i| per_replicate.iter().map(|p| p[i]).sum::<f64>() / r)
            .collect())
    }

    fn replicate_predictions(&self, columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.replicates.iter().map(|m| m.predict(columns)).collect()
    }

    /// Percentile-bootstrap 95% intervals per record. Intervals are
    /// widened, if necessary, to contain the point estimate so that
    /// lower <= tau_hat <= upper always holds.
    pub fn predict_interval(&self, columns: &[Vec<f64>]) -> Result<Vec<CateInterval>> {
        if self.replicates.len() < MIN_REPLICATES {
            return Err(Error::Parameter(format!(
                "need at least {MIN_REPLICATES} replicates for intervals, got {}",
                self.replicates.len()
            )));
        }
        let per_replicate = self.replicate_predictions(columns)?;
        let n = per_replicate[0].len();
        let r = self.replicates.len();
        let alpha = (1.0 - CI_LEVEL) / 2.0;
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut values: Vec<f64> = per_replicate.iter().map(|p| p[i]).collect();
                values.sort_unstable_by(|a, b| a.total_cmp(b));
                // identical replicates collapse exactly, no rounding drift
                let tau_hat = if values[0] == values[r - 1] {
                    values[0]
                } else {
                    values.iter().sum::<f64>() / r as f64
                };
                let lower = percentile_sorted(&values, alpha).min(tau_hat);
                let upper = percentile_sorted(&values, 1.0 - alpha).max(tau_hat);
                CateInterval {
                    tau_hat,
                    lower,
                    upper,
                    level: CI_LEVEL,
                }
            })
            .collect())
    }
}

/// Linear-interpolation percentile of an ascending-sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let f = pos - lo as f64;
        sorted[lo] + f * (sorted[hi] - sorted[lo])
    }
}

//! Ranking-quality evaluation: cumulative gain curves, the Qini
//! coefficient, capture-at-fraction, targeting-policy simulation, and
//! CI-based segmentation.
//!
//! The gain curve G(phi) is the fraction of total incremental conversions
//! captured when targeting the top-phi fraction of records ranked by
//! descending score. Incremental conversions among the top k records are
//! estimated as (mean(y | treated, top-k) - mean(y | control, top-k)) * k,
//! and G normalizes by the same quantity at k = n. The normalization is
//! only meaningful when the total incremental effect is positive;
//! [`incremental_curve`] exposes the unnormalized counts for settings
//! where it is not.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::CateInterval;
use crate::meta::ModelId;

/// How records with exactly equal scores are ordered.
///
/// `Shuffle` breaks ties by a seeded permutation (the seed is recorded in
/// the curve). `Average` treats each tie block as an infinitesimally mixed
/// unit, which makes the curve independent of any tie-resolution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum TiePolicy {
    Shuffle { seed: u64 },
    Average,
}

/// Cumulative gain curve on a fixed phi grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainCurve {
    pub phi: Vec<f64>,
    pub gain: Vec<f64>,
    /// Denominator: estimated total incremental conversions over all n.
    pub total_incremental: f64,
    /// Grid indices whose top-k contained a single arm and were imputed
    /// by linear interpolation from valid neighbors.
    pub imputed: Vec<usize>,
    pub tie_policy: TiePolicy,
}

/// Unnormalized incremental-conversion curve on a fixed phi grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementalCurve {
    pub phi: Vec<f64>,
    pub incremental: Vec<f64>,
    pub total_incremental: f64,
    pub imputed: Vec<usize>,
    pub tie_policy: TiePolicy,
    /// Number of records the curve was computed over.
    pub records: usize,
}

impl IncrementalCurve {
    /// Area between the incremental curve and the straight line to its
    /// endpoint, scaled per record: the average incremental-conversion
    /// advantage of model targeting over random targeting. Well-defined
    /// even when the total incremental effect is zero or negative.
    pub fn qini_per_record(&self) -> f64 {
        if self.phi.len() < 2 || self.records == 0 {
            return 0.0;
        }
        let mut area = 0.0;
        for j in 0..self.phi.len() - 1 {
            let a = self.incremental[j] - self.phi[j] * self.total_incremental;
            let b = self.incremental[j + 1] - self.phi[j + 1] * self.total_incremental;
            area += (self.phi[j + 1] - self.phi[j]) * 0.5 * (a + b);
        }
        area / self.records as f64
    }
}

/// Qini coefficient plus the curve it was integrated over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QiniResult {
    pub qini: f64,
    pub model_id: Option<ModelId>,
    pub curve: GainCurve,
}

impl QiniResult {
    pub fn with_model(mut self, id: ModelId) -> Self {
        self.model_id = Some(id);
        self
    }
}

struct RankedStats {
    /// cum[k] = (treated count, treated outcome sum, control count,
    /// control outcome sum) over the top-k records.
    cum: Vec<[f64; 4]>,
    /// Exclusive end positions of score-tie blocks (Average policy only).
    block_ends: Option<Vec<usize>>,
}

impl RankedStats {
    fn at(&self, k: usize) -> [f64; 4] {
        match &self.block_ends {
            None => self.cum[k],
            Some(ends) => {
                if k == 0 {
                    return [0.0; 4];
                }
                let bi = ends.partition_point(|&e| e < k);
                let end = ends[bi];
                let start = if bi == 0 { 0 } else { ends[bi - 1] };
                if k == end {
                    return self.cum[k];
                }
                let f = (k - start) as f64 / (end - start) as f64;
                let lo = self.cum[start];
                let hi = self.cum[end];
                [
                    lo[0] + f * (hi[0] - lo[0]),
                    lo[1] + f * (hi[1] - lo[1]),
                    lo[2] + f * (hi[2] - lo[2]),
                    lo[3] + f * (hi[3] - lo[3]),
                ]
            }
        }
    }
}

fn rank_records(
    scores: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    tie: TiePolicy,
) -> RankedStats {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    match tie {
        TiePolicy::Shuffle { seed } => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut pos = vec![0usize; n];
            for (p, &i) in perm.iter().enumerate() {
                pos[i] = p;
            }
            order.sort_unstable_by(|&a, &b| {
                scores[b].total_cmp(&scores[a]).then(pos[a].cmp(&pos[b]))
            });
        }
        TiePolicy::Average => {
            // ties kept in original index order; only block boundaries are
            // read, so any within-block order would give the same curve
            order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        }
    }
    let mut cum = Vec::with_capacity(n + 1);
    cum.push([0.0; 4]);
    let mut acc = [0.0; 4];
    for &i in &order {
        if treatment[i] == 1 {
            acc[0] += 1.0;
            acc[1] += outcome[i] as f64;
        } else {
            acc[2] += 1.0;
            acc[3] += outcome[i] as f64;
        }
        cum.push(acc);
    }
    let block_ends = match tie {
        TiePolicy::Shuffle { .. } => None,
        TiePolicy::Average => {
            let mut ends = Vec::new();
            for k in 1..=n {
                if k == n || scores[order[k]] != scores[order[k - 1]] {
                    ends.push(k);
                }
            }
            Some(ends)
        }
    };
    RankedStats { cum, block_ends }
}

fn validate_eval_inputs(
    scores: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    grid_size: usize,
) -> Result<()> {
    let n = scores.len();
    if treatment.len() != n || outcome.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: treatment.len().min(outcome.len()),
        });
    }
    if n < 2 {
        return Err(Error::Evaluation("need at least two records".into()));
    }
    if grid_size < 10 {
        return Err(Error::Parameter(format!(
            "grid_size must be >= 10, got {grid_size}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Evaluation("scores must be finite".into()));
    }
    let treated = treatment.iter().filter(|&&t| t == 1).count();
    if treated == 0 || treated == n {
        return Err(Error::Evaluation(
            "both arms must be present to evaluate a gain curve".into(),
        ));
    }
    Ok(())
}

/// Linear interpolation over NaN placeholders; endpoints must be valid.
fn impute_nans(values: &mut [f64]) -> Vec<usize> {
    let mut imputed = Vec::new();
    let n = values.len();
    let mut j = 0;
    while j < n {
        if values[j].is_nan() {
            let start = j;
            let mut end = j;
            while end < n && values[end].is_nan() {
                end += 1;
            }
            let lo = values[start - 1];
            let hi = values[end];
            let span = (end - start + 1) as f64;
            for (step, v) in values[start..end].iter_mut().enumerate() {
                let f = (step + 1) as f64 / span;
                *v = lo + f * (hi - lo);
                imputed.push(start + step);
            }
            j = end;
        } else {
            j += 1;
        }
    }
    imputed
}

/// Unnormalized incremental-conversion curve; defined regardless of the
/// sign of the total incremental effect.
pub fn incremental_curve(
    scores: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    grid_size: usize,
    tie: TiePolicy,
) -> Result<IncrementalCurve> {
    validate_eval_inputs(scores, treatment, outcome, grid_size)?;
    let n = scores.len();
    let ranked = rank_records(scores, treatment, outcome, tie);
    let total_stats = ranked.at(n);
    let total = (total_stats[1] / total_stats[0] - total_stats[3] / total_stats[2]) * n as f64;
    let mut phi = Vec::with_capacity(grid_size + 1);
    let mut incremental = Vec::with_capacity(grid_size + 1);
    for j in 0..=grid_size {
        let p = j as f64 / grid_size as f64;
        phi.push(p);
        let k = ((p * n as f64).ceil() as usize).min(n);
        if k == 0 {
            incremental.push(0.0);
            continue;
        }
        let [nt, st, nc, sc] = ranked.at(k);
        if nt == 0.0 || nc == 0.0 {
            incremental.push(f64::NAN);
            continue;
        }
        incremental.push((st / nt - sc / nc) * k as f64);
    }
    let imputed = impute_nans(&mut incremental);
    Ok(IncrementalCurve {
        phi,
        incremental,
        total_incremental: total,
        imputed,
        tie_policy: tie,
        records: n,
    })
}

/// Normalized cumulative gain curve. Errors when the estimated total
/// incremental effect is zero or negative (the normalization is undefined
/// there by construction).
pub fn gain_curve(
    scores: &[f64],
    treatment: &[u8],
    outcome: &[u8],
    grid_size: usize,
    tie: TiePolicy,
) -> Result<GainCurve> {
    let inc = incremental_curve(scores, treatment, outcome, grid_size, tie)?;
    if inc.total_incremental <= 0.0 {
        return Err(Error::Evaluation(format!(
            "total incremental effect is not positive ({:.6}); the normalized gain curve is undefined",
            inc.total_incremental
        )));
    }
    let gain = inc
        .incremental
        .iter()
        .map(|&v| v / inc.total_incremental)
        .collect();
    Ok(GainCurve {
        phi: inc.phi,
        gain,
        total_incremental: inc.total_incremental,
        imputed: inc.imputed,
        tie_policy: tie,
    })
}

/// Trapezoidal integral of (G(phi) - phi) over the stored grid.
pub fn qini(curve: GainCurve) -> QiniResult {
    let mut area = 0.0;
    for j in 0..curve.phi.len() - 1 {
        let a = curve.gain[j] - curve.phi[j];
        let b = curve.gain[j + 1] - curve.phi[j + 1];
        area += (curve.phi[j + 1] - curve.phi[j]) * 0.5 * (a + b);
    }
    QiniResult {
        qini: area,
        model_id: None,
        curve,
    }
}

/// Linear interpolation of G at an arbitrary phi in [0,1].
pub fn capture_at(curve: &GainCurve, phi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Parameter(format!(
            "phi must lie in [0,1], got {phi}"
        )));
    }
    let grid = &curve.phi;
    match grid.binary_search_by(|p| p.total_cmp(&phi)) {
        Ok(j) => Ok(curve.gain[j]),
        Err(j) => {
            let lo = j - 1;
            let f = (phi - grid[lo]) / (grid[j] - grid[lo]);
            Ok(curve.gain[lo] + f * (curve.gain[j] - curve.gain[lo]))
        }
    }
}

/// One strategy row of a policy simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRow {
    pub strategy: String,
    pub fraction: f64,
    pub contacts: u64,
    /// Share of total incremental conversions captured.
    pub captured: f64,
    /// captured / fraction: incremental conversions per contact relative
    /// to random targeting at the same budget.
    pub efficiency: f64,
    pub spend: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub population: u64,
    pub cost_per_contact: f64,
    pub rows: Vec<PolicyRow>,
}

/// Targeting-efficiency arithmetic for a hypothetical campaign: one
/// untargeted row, then per requested fraction a model row and a
/// random-baseline row.
pub fn policy_simulate(
    curve: &GainCurve,
    population: u64,
    cost_per_contact: f64,
    fractions: &[f64],
) -> Result<PolicyReport> {
    if population < 1 {
        return Err(Error::Parameter("population must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(1 + 2 * fractions.len());
    rows.push(PolicyRow {
        strategy: "untargeted".to_string(),
        fraction: 1.0,
        contacts: population,
        captured: capture_at(curve, 1.0)?,
        efficiency: capture_at(curve, 1.0)?,
        spend: population as f64 * cost_per_contact,
    });
    for &phi in fractions {
        let captured = capture_at(curve, phi)?;
        let contacts = (phi * population as f64).round() as u64;
        let spend = contacts as f64 * cost_per_contact;
        rows.push(PolicyRow {
            strategy: "model".to_string(),
            fraction: phi,
            contacts,
            captured,
            efficiency: if phi > 0.0 { captured / phi } else { 0.0 },
            spend,
        });
        rows.push(PolicyRow {
            strategy: "random".to_string(),
            fraction: phi,
            contacts,
            captured: phi,
            efficiency: 1.0,
            spend,
        });
    }
    Ok(PolicyReport {
        population,
        cost_per_contact,
        rows,
    })
}

/// Segment counts from per-record confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCounts {
    /// lower bound > 0: confidently positive effect.
    pub persuadable: usize,
    /// upper bound < 0: confidently negative effect.
    pub sleeping_dog: usize,
    /// interval overlaps zero.
    pub uncertain: usize,
}

impl SegmentCounts {
    pub fn n(&self) -> usize {
        self.persuadable + self.sleeping_dog + self.uncertain
    }

    pub fn shares(&self) -> (f64, f64, f64) {
        let n = self.n() as f64;
        (
            self.persuadable as f64 / n,
            self.sleeping_dog as f64 / n,
            self.uncertain as f64 / n,
        )
    }
}

pub fn segment_by_interval(intervals: &[CateInterval]) -> SegmentCounts {
    let mut counts = SegmentCounts {
        persuadable: 0,
        sleeping_dog: 0,
        uncertain: 0,
    };
    for iv in intervals {
        if iv.lower > 0.0 {
            counts.persuadable += 1;
        } else if iv.upper < 0.0 {
            counts.sleeping_dog += 1;
        } else {
            counts.uncertain += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dgp, DgpPreset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_curve(phi: Vec<f64>, gain: Vec<f64>) -> GainCurve {
        GainCurve {
            phi,
            gain,
            total_incremental: 100.0,
            imputed: vec![],
            tie_policy: TiePolicy::Average,
        }
    }

    #[test]
    fn diagonal_curve_has_zero_qini() {
        let phi: Vec<f64> = (0..=100).map(|j| j as f64 / 100.0).collect();
        let gain = phi.clone();
        let q = qini(synthetic_curve(phi, gain));
        assert_eq!(q.qini, 0.0);
    }

    #[test]
    fn piecewise_curve_qini_matches_closed_form() {
        // G = min(phi/0.2, 1): integral of (G - phi) over [0,1] is 0.4
        let phi: Vec<f64> = (0..=100).map(|j| j as f64 / 100.0).collect();
        let gain: Vec<f64> = phi.iter().map(|&p| (p / 0.2).min(1.0)).collect();
        let q = qini(synthetic_curve(phi, gain));
        assert!((q.qini - 0.4).abs() < 1e-9, "qini {}", q.qini);
    }

    #[test]
    fn capture_interpolates_and_hits_endpoints() {
        let phi = vec![0.0, 0.2, 1.0];
        let gain = vec![0.0, 0.777, 1.0];
        let curve = synthetic_curve(phi, gain);
        assert_eq!(capture_at(&curve, 0.0).unwrap(), 0.0);
        assert_eq!(capture_at(&curve, 1.0).unwrap(), 1.0);
        assert_eq!(capture_at(&curve, 0.2).unwrap(), 0.777);
        let mid = capture_at(&curve, 0.6).unwrap();
        assert!((mid - (0.777 + 0.5 * (1.0 - 0.777))).abs() < 1e-12);
        assert!(capture_at(&curve, 1.5).is_err());
    }

    #[test]
    fn constant_scores_give_diagonal_under_averaging() {
        let (ds, _) = generate_dgp(&DgpPreset::Constant.spec(10_000, 40)).unwrap();
        let scores = vec![0.5; ds.n()];
        let curve = gain_curve(
            &scores,
            ds.treatment(),
            ds.outcome(),
            100,
            TiePolicy::Average,
        )
        .unwrap();
        for (p, g) in curve.phi.iter().zip(&curve.gain) {
            assert!(
                (g - p).abs() < 1e-3 + 2.0 / ds.n() as f64,
                "phi {p} gain {g}"
            );
        }
    }

    #[test]
    fn oracle_scores_dominate_diagonal_on_signflip() {
        // the mean effect is zero by construction, so the normalized curve
        // exists only when the realized total incremental is positive;
        // fix the first seed that gives a usable denominator
        let (ds, truth) = (41..60)
            .map(|seed| generate_dgp(&DgpPreset::SignFlip.spec(200_000, seed)).unwrap())
            .find(|(ds, _)| crate::synth::empirical_ate(ds) > 0.001)
            .expect("a seed with positive realized ATE");
        let curve = gain_curve(
            &truth.tau,
            ds.treatment(),
            ds.outcome(),
            100,
            TiePolicy::Average,
        )
        .unwrap();
        let g_half = capture_at(&curve, 0.5).unwrap();
        assert!(g_half > 0.5, "G(0.5) = {g_half}");
        let q = qini(curve);
        assert!(q.qini > 0.0);
    }

    #[test]
    fn rank_invariance_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 20_000;
        let (ds, _) = generate_dgp(&DgpPreset::Constant.spec(n, 43)).unwrap();
        // mix of continuous scores and exact ties
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < 0.3 {
                    (rng.gen_range(0..5) as f64) * 0.01
                } else {
                    rng.gen::<f64>() * 0.04
                }
            })
            .collect();
        let base = qini(
            gain_curve(&scores, ds.treatment(), ds.outcome(), 100, TiePolicy::Average).unwrap(),
        );
        for transform in [
            (|s: f64| 2.0 * s + 7.0) as fn(f64) -> f64,
            (|s: f64| s.tanh()) as fn(f64) -> f64,
        ] {
            let mapped: Vec<f64> = scores.iter().map(|&s| transform(s)).collect();
            let q = qini(
                gain_curve(&mapped, ds.treatment(), ds.outcome(), 100, TiePolicy::Average)
                    .unwrap(),
            );
            assert_eq!(base.qini.to_bits(), q.qini.to_bits());
            for (a, b) in base.curve.gain.iter().zip(&q.curve.gain) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn shuffle_policy_is_deterministic_per_seed() {
        let (ds, _) = generate_dgp(&DgpPreset::Constant.spec(5_000, 44)).unwrap();
        let scores: Vec<f64> = (0..ds.n()).map(|i| (i % 7) as f64).collect();
        let tie = TiePolicy::Shuffle { seed: 5 };
        let a = gain_curve(&scores, ds.treatment(), ds.outcome(), 50, tie).unwrap();
        let b = gain_curve(&scores, ds.treatment(), ds.outcome(), 50, tie).unwrap();
        assert_eq!(a.gain, b.gain);
    }

    #[test]
    fn negative_total_incremental_is_evaluation_error() {
        // treated outcomes strictly worse than control
        let n = 100;
        let treatment: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let outcome: Vec<u8> = treatment.iter().map(|&t| 1 - t).collect();
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let err = gain_curve(&scores, &treatment, &outcome, 10, TiePolicy::Average).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
        // the unnormalized curve still works
        let inc = incremental_curve(&scores, &treatment, &outcome, 10, TiePolicy::Average).unwrap();
        assert!(inc.total_incremental < 0.0);
    }

    #[test]
    fn one_arm_prefix_is_imputed_and_flagged() {
        // first few ranked records all treated
        let n = 40;
        let mut treatment = vec![0u8; n];
        let mut outcome = vec![0u8; n];
        for i in 0..n {
            treatment[i] = if i < 8 { 1 } else { (i % 2) as u8 };
            outcome[i] = if treatment[i] == 1 && i % 3 == 0 { 1 } else { 0 };
        }
        // ensure control has some positives so the total is positive
        outcome[9] = 0;
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let curve =
            gain_curve(&scores, &treatment, &outcome, 10, TiePolicy::Average).unwrap();
        assert!(!curve.imputed.is_empty());
        assert!(curve.gain.iter().all(|g| g.is_finite()));
        assert_eq!(curve.gain[0], 0.0);
        assert_eq!(*curve.gain.last().unwrap(), 1.0);
    }

    #[test]
    fn random_scores_have_null_mean_qini() {
        let (ds, _) = generate_dgp(&DgpPreset::Constant.spec(30_000, 45)).unwrap();
        let mut sum = 0.0;
        let reps = 100;
        for seed in 0..reps {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let scores: Vec<f64> = (0..ds.n()).map(|_| rng.gen::<f64>()).collect();
            let q = qini(
                gain_curve(&scores, ds.treatment(), ds.outcome(), 100, TiePolicy::Average)
                    .unwrap(),
            );
            sum += q.qini;
        }
        let mean = sum / reps as f64;
        assert!(mean.abs() <= 0.02, "mean qini over {reps} seeds: {mean}");
    }

    #[test]
    fn policy_matches_reference_arithmetic() {
        let phi = vec![0.0, 0.2, 0.5, 1.0];
        let gain = vec![0.0, 0.777, 0.958, 1.0];
        let curve = synthetic_curve(phi, gain);
        let report = policy_simulate(&curve, 1_000_000, 1.0, &[0.2]).unwrap();
        assert_eq!(report.rows.len(), 3);
        let untargeted = &report.rows[0];
        assert_eq!(untargeted.contacts, 1_000_000);
        assert_eq!(untargeted.efficiency, 1.0);
        let model = &report.rows[1];
        assert_eq!(model.contacts, 200_000);
        assert_eq!(model.captured, 0.777);
        assert!((model.efficiency - 3.885).abs() < 1e-12);
        assert_eq!(model.spend, 200_000.0);
        let random = &report.rows[2];
        assert_eq!(random.captured, 0.2);
        assert_eq!(random.efficiency, 1.0);
    }

    #[test]
    fn segmentation_partitions_records() {
        let intervals = vec![
            CateInterval {
                tau_hat: 0.01,
                lower: -0.01,
                upper: 0.03,
                level: 0.95,
            };
            25
        ];
        let counts = segment_by_interval(&intervals);
        assert_eq!(counts.uncertain, 25);
        assert_eq!(counts.n(), 25);

        let mixed = vec![
            CateInterval {
                tau_hat: 0.02,
                lower: 0.005,
                upper: 0.04,
                level: 0.95,
            },
            CateInterval {
                tau_hat: -0.02,
                lower: -0.04,
                upper: -0.001,
                level: 0.95,
            },
            CateInterval {
                tau_hat: 0.0,
                lower: -0.01,
                upper: 0.01,
                level: 0.95,
            },
        ];
        let counts = segment_by_interval(&mixed);
        assert_eq!(
            (counts.persuadable, counts.sleeping_dog, counts.uncertain),
            (1, 1, 1)
        );
    }
}

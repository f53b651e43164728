//! Propensity estimation: logistic regression of treatment on features,
//! AUC diagnostics, and appending e(x) as an extra feature for the
//! meta-learners.

use serde::{Deserialize, Serialize};

use crate::data::UpliftDataset;
use crate::error::{Error, Result};
use crate::logistic::{logistic_fit, LogisticFit, LogisticModel};

/// Rank-statistic AUC with ties counted half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0_f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Propensity diagnostic bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityReport {
    pub auc: f64,
    pub model: LogisticModel,
    pub converged: bool,
    pub iterations: usize,
}

const PROPENSITY_L2: f64 = 1.0;

/// Fit e(x) on (standardized) training features; AUC is reported on the
/// same data (use [`propensity_auc`] for held-out data).
pub fn fit_propensity(train: &UpliftDataset) -> Result<PropensityReport> {
    let treated = train.treatment().iter().filter(|&&t| t == 1).count();
    if treated == 0 || treated == train.n() {
        return Err(Error::Fit(
            "both treatment arms must be present to fit a propensity model".into(),
        ));
    }
    let target = train.treatment_f64();
    let LogisticFit {
        model,
        converged,
        iterations,
        ..
    } = logistic_fit(train.features(), &target, PROPENSITY_L2)?;
    let scores = model.predict(train.features())?;
    let auc = auc(&scores, train.treatment())?;
    Ok(PropensityReport {
        auc,
        model,
        converged,
        iterations,
    })
}

/// AUC of a fitted propensity model on an arbitrary dataset.
pub fn propensity_auc(model: &LogisticModel, ds: &UpliftDataset) -> Result<f64> {
    let scores = model.predict(&ds.features()[..model.d()])?;
    auc(&scores, ds.treatment())
}

pub const PROPENSITY_FEATURE: &str = "propensity";

/// Append predicted e(x) as a feature column named "propensity". The
/// scores are left on their natural (0,1) scale, not re-standardized.
pub fn append_propensity(ds: &UpliftDataset, model: &LogisticModel) -> Result<UpliftDataset> {
    if model.d() != ds.d() {
        return Err(Error::Dimension {
            expected: model.d(),
            actual: ds.d(),
        });
    }
    let scores = model.predict(ds.features())?;
    ds.append_feature(PROPENSITY_FEATURE, scores)
}

//! Quantile binning shared by the tree learners.
//!
//! Bin index convention: `bin(x) = #{cut points < x}`, so a split at bin
//! `b` routes `x` left exactly when `x <= cuts[b]`. Training on bin codes
//! and predicting on raw values against the stored cut thresholds are
//! therefore bit-equivalent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BINS: usize = 255;

/// Per-feature sorted cut points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinningScheme {
    cuts: Vec<Vec<f64>>,
}

impl BinningScheme {
    /// Fit cut points on the given columns. Features with at most
    /// `max_bins` distinct values get one bin per distinct value
    /// (lossless); otherwise cuts sit at empirical quantiles.
    pub fn fit(columns: &[Vec<f64>], max_bins: usize) -> Result<Self> {
        if !(2..=MAX_BINS).contains(&max_bins) {
            return Err(Error::Parameter(format!(
                "max_bins must lie in [2, {MAX_BINS}], got {max_bins}"
            )));
        }
        let cuts = columns
            .iter()
            .map(|col| feature_cuts(col, max_bins))
            .collect();
        Ok(BinningScheme { cuts })
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn cuts(&self, feature: usize) -> &[f64] {
        &self.cuts[feature]
    }

    /// Raw threshold for "route left iff x <= threshold" at a given bin.
    pub fn threshold(&self, feature: usize, bin: usize) -> f64 {
        self.cuts[feature][bin]
    }

    pub fn bin_value(&self, feature: usize, x: f64) -> u8 {
        self.cuts[feature].partition_point(|c| *c < x) as u8
    }

    /// Encode columns into bin codes (column-major u8).
    pub fn encode(&self, columns: &[Vec<f64>]) -> Result<BinnedMatrix> {
        if columns.len() != self.cuts.len() {
            return Err(Error::Dimension {
                expected: self.cuts.len(),
                actual: columns.len(),
            });
        }
        let codes = columns
            .iter()
            .enumerate()
            .map(|(j, col)| col.iter().map(|&x| self.bin_value(j, x)).collect())
            .collect();
        Ok(BinnedMatrix {
            codes,
            scheme: self.clone(),
        })
    }
}

fn feature_cuts(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let mut distinct: Vec<f64> = Vec::new();
    for &v in &sorted {
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() <= max_bins {
        // Lossless: midpoints between consecutive distinct values.
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts = Vec::with_capacity(max_bins - 1);
    for j in 1..max_bins {
        let idx = (j * n) / max_bins;
        let c = sorted[idx];
        if cuts.last().map_or(true, |&prev| c > prev) {
            cuts.push(c);
        }
    }
    cuts
}

/// A column-major matrix of bin codes plus the scheme that produced it.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    codes: Vec<Vec<u8>>,
    scheme: BinningScheme,
}

impl BinnedMatrix {
    pub fn n(&self) -> usize {
        self.codes.first().map_or(0, |c| c.len())
    }

    pub fn n_features(&self) -> usize {
        self.codes.len()
    }

    pub fn codes(&self, feature: usize) -> &[u8] {
        &self.codes[feature]
    }

    pub fn scheme(&self) -> &BinningScheme {
        &self.scheme
    }
}

/// Convenience wrapper: fit a scheme on columns and encode them.
pub fn quantile_bin(columns: &[Vec<f64>], max_bins: usize) -> Result<BinnedMatrix> {
    BinningScheme::fit(columns, max_bins)?.encode(columns)
}

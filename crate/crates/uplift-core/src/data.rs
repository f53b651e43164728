//! Dataset representation, CSV ingestion, stratified splitting, and
//! z-score standardization.
//!
//! The dataset layout is column-major: the treated/control arms and the
//! learners all scan whole columns, never whole rows.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which outcome column a run models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Visit,
    Conversion,
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeKind::Visit => write!(f, "visit"),
            OutcomeKind::Conversion => write!(f, "conversion"),
        }
    }
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "visit" => Ok(OutcomeKind::Visit),
            "conversion" => Ok(OutcomeKind::Conversion),
            other => Err(Error::Config(format!(
                "unknown outcome '{other}', expected 'visit' or 'conversion'"
            ))),
        }
    }
}

/// Column-name mapping for CSV ingestion. Extra columns are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub treatment_column: String,
    pub visit_column: String,
    pub conversion_column: String,
    pub outcome: OutcomeKind,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            feature_columns: (0..12).map(|i| format!("f{i}")).collect(),
            treatment_column: "treatment".to_string(),
            visit_column: "visit".to_string(),
            conversion_column: "conversion".to_string(),
            outcome: OutcomeKind::Visit,
        }
    }
}

impl CsvSchema {
    pub fn outcome_column(&self) -> &str {
        match self.outcome {
            OutcomeKind::Visit => &self.visit_column,
            OutcomeKind::Conversion => &self.conversion_column,
        }
    }
}

/// A tabular uplift dataset: feature matrix, treatment indicator, and
/// binary outcome, with an optional known-propensity channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpliftDataset {
    features: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    propensity: Option<Vec<f64>>,
}

impl UpliftDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
        propensity: Option<Vec<f64>>,
    ) -> Result<Self> {
        let d = features.len();
        if d < 1 {
            return Err(Error::Parameter("dataset needs at least one feature".into()));
        }
        if feature_names.len() != d {
            return Err(Error::Parameter(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                d
            )));
        }
        let n = treatment.len();
        if n < 2 {
            return Err(Error::Parameter("dataset needs at least two rows".into()));
        }
        if outcome.len() != n || features.iter().any(|c| c.len() != n) {
            return Err(Error::Parameter("column lengths disagree".into()));
        }
        if let Some(p) = &propensity {
            if p.len() != n {
                return Err(Error::Parameter("propensity length disagrees".into()));
            }
            if p.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Parameter(
                    "propensity values must lie strictly in (0,1)".into(),
                ));
            }
        }
        if treatment.iter().any(|&t| t > 1) || outcome.iter().any(|&y| y > 1) {
            return Err(Error::Parameter(
                "treatment and outcome must contain only 0 or 1".into(),
            ));
        }
        if features.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Parameter("features must be finite".into()));
        }
        Ok(UpliftDataset {
            features,
            feature_names,
            treatment,
            outcome,
            propensity,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn propensity(&self) -> Option<&[f64]> {
        self.propensity.as_deref()
    }

    pub fn with_propensity(mut self, propensity: Vec<f64>) -> Result<Self> {
        if propensity.len() != self.n() {
            return Err(Error::Parameter("propensity length disagrees".into()));
        }
        if propensity.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Parameter(
                "propensity values must lie strictly in (0,1)".into(),
            ));
        }
        self.propensity = Some(propensity);
        Ok(self)
    }

    /// Outcome as f64, the shape every learner consumes.
    pub fn outcome_f64(&self) -> Vec<f64> {
        self.outcome.iter().map(|&y| y as f64).collect()
    }

    /// Treatment as f64 (used as a model input by the S-learner).
    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&t| t as f64).collect()
    }

    /// Row subset in the order given by `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let take_f = |c: &Vec<f64>| indices.iter().map(|&i| c[i]).collect::<Vec<f64>>();
        UpliftDataset::new(
            self.features.iter().map(take_f).collect(),
            self.feature_names.clone(),
            indices.iter().map(|&i| self.treatment[i]).collect(),
            indices.iter().map(|&i| self.outcome[i]).collect(),
            self.propensity
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        )
    }

    /// Append a feature column (e.g. an estimated propensity score).
    pub fn append_feature(&self, name: &str, column: Vec<f64>) -> Result<Self> {
        if column.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                actual: column.len(),
            });
        }
        let mut features = self.features.clone();
        let mut names = self.feature_names.clone();
        features.push(column);
        names.push(name.to_string());
        UpliftDataset::new(
            features,
            names,
            self.treatment.clone(),
            self.outcome.clone(),
            self.propensity.clone(),
        )
    }

    /// Drop a feature column by name.
    pub fn drop_feature(&self, name: &str) -> Result<Self> {
        let j = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })?;
        let mut features = self.features.clone();
        let mut names = self.feature_names.clone();
        features.remove(j);
        names.remove(j);
        UpliftDataset::new(
            features,
            names,
            self.treatment.clone(),
            self.outcome.clone(),
            self.propensity.clone(),
        )
    }

    /// Write the dataset as a Criteo-schema CSV: features, treatment, and
    /// the outcome under the schema's selected outcome column name.
    pub fn write_csv(&self, path: &Path, schema: &CsvSchema) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header: Vec<&str> = self.feature_names.iter().map(|s| s.as_str()).collect();
        header.push(&schema.treatment_column);
        let outcome_col = schema.outcome_column().to_string();
        header.push(&outcome_col);
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.n() {
            line.clear();
            for c in &self.features {
                // ryu-style shortest round-trip formatting via Display
                line.push_str(&format!("{}", c[i]));
                line.push(',');
            }
            line.push_str(&format!("{},{}", self.treatment[i], self.outcome[i]));
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        });
    }
    trimmed.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    let v = parse_cell(raw, row, column)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Domain {
            row,
            column: column.to_string(),
            message: format!("value {v} outside {{0,1}}"),
        })
    }
}

/// Load a CSV file under the given schema. Row order is preserved; data
/// rows are numbered from 1 in error messages.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<UpliftDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let locate = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| locate(c))
        .collect::<Result<_>>()?;
    let treatment_idx = locate(&schema.treatment_column)?;
    let outcome_idx = locate(schema.outcome_column())?;

    let d = feature_idx.len();
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    for (row_i, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_i + 1;
        for (j, &idx) in feature_idx.iter().enumerate() {
            features[j].push(parse_cell(&record[idx], row, &schema.feature_columns[j])?);
        }
        treatment.push(parse_binary(
            &record[treatment_idx],
            row,
            &schema.treatment_column,
        )?);
        outcome.push(parse_binary(&record[outcome_idx], row, schema.outcome_column())?);
    }
    UpliftDataset::new(
        features,
        schema.feature_columns.clone(),
        treatment,
        outcome,
        None,
    )
}

/// Disjoint train/test index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Group row indices by the joint (treatment, outcome) stratum.
/// Stratum order is fixed: (0,0), (0,1), (1,0), (1,1).
pub(crate) fn strata_indices(treatment: &[u8], outcome: &[u8]) -> [Vec<usize>; 4] {
    let mut strata: [Vec<usize>; 4] = Default::default();
    for i in 0..treatment.len() {
        let s = (treatment[i] as usize) * 2 + outcome[i] as usize;
        strata[s].push(i);
    }
    strata
}

pub(crate) fn stratum_label(s: usize) -> (u8, u8) {
    ((s / 2) as u8, (s % 2) as u8)
}

/// Stratified train/test split on the joint (treatment, outcome) strata.
/// Joint stratification preserves both the treatment and outcome marginals,
/// which matters under heavy arm imbalance.
pub fn stratified_split(
    ds: &UpliftDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test_fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let strata = strata_indices(ds.treatment(), ds.outcome());
    for (s, members) in strata.iter().enumerate() {
        if members.len() < 2 {
            let (t, y) = stratum_label(s);
            return Err(Error::Stratification {
                treatment: t,
                outcome: y,
                count: members.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in &strata {
        let mut order = members.clone();
        order.shuffle(&mut rng);
        let k = (test_fraction * members.len() as f64).round() as usize;
        let k = k.min(members.len());
        test.extend_from_slice(&order[..k]);
        train.extend_from_slice(&order[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Per-feature z-score parameters fit on the training rows.
/// Stds use the population (divide-by-n) convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Constant columns are flagged and passed through unchanged.
    pub constant: Vec<bool>,
}

impl StandardizationParams {
    pub fn fit(ds: &UpliftDataset, rows: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Parameter(
                "standardization needs at least two training rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(ds.d());
        let mut stds = Vec::with_capacity(ds.d());
        let mut constant = Vec::with_capacity(ds.d());
        for col in ds.features() {
            let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            let is_const = std == 0.0;
            means.push(mean);
            stds.push(if is_const { 1.0 } else { std });
            constant.push(is_const);
        }
        Ok(StandardizationParams {
            means,
            stds,
            constant,
        })
    }

    /// Transform every row of the dataset with these (train-fitted) params.
    pub fn transform(&self, ds: &UpliftDataset) -> Result<UpliftDataset> {
        if self.means.len() != ds.d() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                actual: ds.d(),
            });
        }
        let features = ds
            .features()
            .iter()
            .enumerate()
            .map(|(j, col)| {
                if self.constant[j] {
                    col.clone()
                } else {
                    col.iter()
                        .map(|&v| (v - self.means[j]) / self.stds[j])
                        .collect()
                }
            })
            .collect();
        UpliftDataset::new(
            features,
            ds.feature_names().to_vec(),
            ds.treatment().to_vec(),
            ds.outcome().to_vec(),
            ds.propensity().map(|p| p.to_vec()),
        )
    }

    /// Invert the transform (used by round-trip checks and exports).
    pub fn invert(&self, ds: &UpliftDataset) -> Result<UpliftDataset> {
        if self.means.len() != ds.d() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                actual: ds.d(),
            });
        }
        let features = ds
            .features()
            .iter()
            .enumerate()
            .map(|(j, col)| {
                if self.constant[j] {
                    col.clone()
                } else {
                    col.iter()
                        .map(|&v| v * self.stds[j] + self.means[j])
                        .collect()
                }
            })
            .collect();
        UpliftDataset::new(
            features,
            ds.feature_names().to_vec(),
            ds.treatment().to_vec(),
            ds.outcome().to_vec(),
            ds.propensity().map(|p| p.to_vec()),
        )
    }
}

/// Fit on the train rows, transform the whole dataset.
pub fn standardize(
    ds: &UpliftDataset,
    train_rows: &[usize],
) -> Result<(StandardizationParams, UpliftDataset)> {
    let params = StandardizationParams::fit(ds, train_rows)?;
    let transformed = params.transform(ds)?;
    Ok((params, transformed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> UpliftDataset {
        // 8 rows, every (t,y) stratum has 2 members.
        UpliftDataset::new(
            vec![
                vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
                vec![5.0; 8],
            ],
            vec!["a".into(), "b".into()],
            vec![0, 0, 0, 0, 1, 1, 1, 1],
            vec![0, 0, 1, 1, 0, 0, 1, 1],
            None,
        )
        .unwrap()
    }

    #[test]
    fn load_csv_basic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,treatment,visit").unwrap();
        for i in 0..4 {
            let feats: Vec<String> = (0..12).map(|j| format!("{}", (i * 12 + j) as f64 * 0.5)).collect();
            writeln!(f, "{},{},{}", feats.join(","), i % 2, (i / 2) % 2).unwrap();
        }
        let ds = load_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.d(), 12);
        assert_eq!(ds.feature(0)[1], 6.0);
        assert_eq!(ds.treatment(), &[0, 1, 0, 1]);
        assert_eq!(ds.outcome(), &[0, 0, 1, 1]);
    }

    #[test]
    fn load_csv_missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f0,treatment,visit").unwrap();
        writeln!(f, "1.0,0,0").unwrap();
        let err = load_csv(&path, &CsvSchema::default()).unwrap_err();
        match err {
            Error::Schema { column } => assert_eq!(column, "f1"),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn load_csv_bad_treatment_cites_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        let mut schema = CsvSchema::default();
        schema.feature_columns = vec!["f0".into()];
        writeln!(f, "f0,treatment,visit").unwrap();
        for row in 1..=10 {
            let t = if row == 7 { "2" } else { "1" };
            writeln!(f, "0.5,{t},0").unwrap();
        }
        let err = load_csv(&path, &schema).unwrap_err();
        match err {
            Error::Domain { row, column, .. } => {
                assert_eq!(row, 7);
                assert_eq!(column, "treatment");
            }
            other => panic!("expected domain error, got {other}"),
        }
    }

    #[test]
    fn load_csv_non_numeric_cell_cites_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        let mut schema = CsvSchema::default();
        schema.feature_columns = vec!["f0".into(), "f1".into()];
        writeln!(f, "f0,f1,treatment,visit").unwrap();
        writeln!(f, "0.5,0.25,1,0").unwrap();
        writeln!(f, "0.5,oops,0,1").unwrap();
        let err = load_csv(&path, &schema).unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f1");
                assert_eq!(value, "oops");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn conversion_outcome_is_selectable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        let mut schema = CsvSchema::default();
        schema.feature_columns = vec!["f0".into()];
        schema.outcome = OutcomeKind::Conversion;
        writeln!(f, "f0,treatment,visit,conversion,exposure").unwrap();
        writeln!(f, "0.5,1,1,0,1").unwrap();
        writeln!(f, "0.6,0,0,1,0").unwrap();
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.outcome(), &[0, 1]);
    }

    #[test]
    fn split_is_deterministic_and_exact_per_stratum() {
        // 100 rows, 25 per stratum, test 0.2 -> exactly 5 per stratum.
        let n = 100;
        let mut t = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            t.push(((i / 25) / 2) as u8);
            y.push(((i / 25) % 2) as u8);
        }
        let ds = UpliftDataset::new(
            vec![(0..n).map(|i| i as f64).collect()],
            vec!["x".into()],
            t,
            y,
            None,
        )
        .unwrap();
        let a = stratified_split(&ds, 0.2, 9).unwrap();
        let b = stratified_split(&ds, 0.2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a.train.len(), 80);
        for s in 0..4 {
            let count = a
                .test
                .iter()
                .filter(|&&i| ds.treatment()[i] as usize * 2 + ds.outcome()[i] as usize == s)
                .count();
            assert_eq!(count, 5);
        }
        // disjoint union covering 0..n
        let mut all: Vec<usize> = a.train.iter().chain(a.test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_small_stratum() {
        let ds = UpliftDataset::new(
            vec![vec![0.0; 7]],
            vec!["x".into()],
            vec![0, 0, 0, 1, 1, 1, 1],
            vec![0, 0, 1, 0, 0, 1, 1],
        // stratum (0,1) has a single member
            None,
        )
        .unwrap();
        let err = stratified_split(&ds, 0.5, 1).unwrap_err();
        match err {
            Error::Stratification {
                treatment, outcome, count,
            } => {
                assert_eq!((treatment, outcome, count), (0, 1, 1));
            }
            other => panic!("expected stratification error, got {other}"),
        }
    }

    #[test]
    fn split_preserves_marginals_under_imbalance() {
        // 85/15 arms, ~4.7% outcome rate, n = 100_000.
        use rand::Rng;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() < 0.85) as u8).collect();
        let y: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() < 0.047) as u8).collect();
        let ds = UpliftDataset::new(
            vec![(0..n).map(|i| i as f64).collect()],
            vec!["x".into()],
            t,
            y,
            None,
        )
        .unwrap();
        let overall_share =
            ds.treatment().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let split = stratified_split(&ds, 0.2, 11).unwrap();
        let test_share = split
            .test
            .iter()
            .map(|&i| ds.treatment()[i] as f64)
            .sum::<f64>()
            / split.test.len() as f64;
        assert!(
            (test_share - overall_share).abs() < 0.002,
            "test treatment share {test_share} vs overall {overall_share}"
        );
    }

    #[test]
    fn standardize_centers_train_and_flags_constants() {
        let ds = toy_dataset();
        let rows: Vec<usize> = (0..8).collect();
        let (params, out) = standardize(&ds, &rows).unwrap();
        assert!(!params.constant[0]);
        assert!(params.constant[1]);
        assert_eq!(out.feature(1), ds.feature(1));
        let mean: f64 = out.feature(0).iter().sum::<f64>() / 8.0;
        let var: f64 = out.feature(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standardize_simple_column_values() {
        // column [1,2,3]: mean 2, population std sqrt(2/3); symmetric output
        let ds = UpliftDataset::new(
            vec![vec![1.0, 2.0, 3.0, 2.0]],
            vec!["x".into()],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
            None,
        )
        .unwrap();
        let (params, out) = standardize(&ds, &[0, 1, 2]).unwrap();
        assert!((params.means[0] - 2.0).abs() < 1e-12);
        assert!((params.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((out.feature(0)[0] + out.feature(0)[2]).abs() < 1e-12);
        assert_eq!(out.feature(0)[1], 0.0);
    }

    #[test]
    fn standardize_round_trip_recovers_values() {
        let ds = toy_dataset();
        let rows: Vec<usize> = (0..8).collect();
        let (params, out) = standardize(&ds, &rows).unwrap();
        let back = params.invert(&out).unwrap();
        for j in 0..ds.d() {
            for i in 0..ds.n() {
                let orig = ds.feature(j)[i];
                let got = back.feature(j)[i];
                let tol = 1e-9 * orig.abs().max(1.0);
                assert!((orig - got).abs() <= tol, "j={j} i={i}: {orig} vs {got}");
            }
        }
    }

    #[test]
    fn standardize_monte_carlo_recovery() {
        use rand::Rng;
        use rand_distr::{Distribution, Normal};
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(10.0, 4.0).unwrap();
        let col: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let t: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() < 0.5) as u8).collect();
        let y: Vec<u8> = (0..n).map(|_| (rng.gen::<f64>() < 0.5) as u8).collect();
        let ds = UpliftDataset::new(vec![col], vec!["x".into()], t, y, None).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let params = StandardizationParams::fit(&ds, &rows).unwrap();
        assert!((params.means[0] - 10.0).abs() < 0.15, "mean {}", params.means[0]);
        assert!((params.stds[0] - 4.0).abs() < 0.15, "std {}", params.stds[0]);
    }

    #[test]
    fn refit_on_transformed_train_is_identity() {
        let ds = toy_dataset();
        let rows: Vec<usize> = (0..8).collect();
        let (_, out) = standardize(&ds, &rows).unwrap();
        let refit = StandardizationParams::fit(&out, &rows).unwrap();
        assert!(refit.means[0].abs() < 1e-9);
        assert!((refit.stds[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn append_then_drop_recovers_dataset() {
        let ds = toy_dataset();
        let appended = ds
            .append_feature("propensity", vec![0.5; ds.n()])
            .unwrap();
        assert_eq!(appended.d(), ds.d() + 1);
        let dropped = appended.drop_feature("propensity").unwrap();
        assert_eq!(dropped.feature_names(), ds.feature_names());
        assert_eq!(dropped.features(), ds.features());
        assert_eq!(dropped.treatment(), ds.treatment());
        assert_eq!(dropped.outcome(), ds.outcome());
    }
}

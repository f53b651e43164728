//! Batch pipeline: preprocessing, propensity, estimation, evaluation,
//! and attribution, with a reproducible JSON run report and plot-ready
//! CSV outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, standardize, stratified_split, CsvSchema, SplitIndices, StandardizationParams,
    UpliftDataset,
};
use crate::error::{Error, Result};
use crate::eval::{
    capture_at, gain_curve, policy_simulate, qini, segment_by_interval, PolicyReport, QiniResult,
    SegmentCounts, TiePolicy,
};
use crate::forest::{
    cf_subsample, CateInterval, CausalForestEnsemble, HonestTreeParams, DEFAULT_REPLICATES,
};
use crate::gbdt::GbdtParams;
use crate::meta::{
    s_fit, s_predict_cate, t_fit, t_predict_cate, x_fit_with_stage1, CateEstimate, ModelId,
    SLearnerModel, TLearnerModel, XLearnerModel,
};
use crate::propensity::{append_propensity, fit_propensity, propensity_auc, PropensityReport};
use crate::seeding::{derive_seed, domains};
use crate::synth::{generate_dgp, DgpPreset};

/// Fully resolved run configuration; embedded verbatim in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// CSV input path (mutually exclusive with `preset`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data: Option<PathBuf>,
    /// Synthetic preset name (mutually exclusive with `data`).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub preset: Option<DgpPreset>,
    /// Row count when generating from a preset.
    pub synth_n: usize,
    pub schema: CsvSchema,
    pub test_fraction: f64,
    pub seed: u64,
    pub models: Vec<ModelId>,
    pub gbdt: GbdtParams,
    pub forest: HonestTreeParams,
    pub cf_replicates: usize,
    /// Stratified fraction of the training split the forest trains on.
    pub cf_train_subsample: f64,
    pub grid_size: usize,
    /// true: average over score-tie blocks; false: seeded shuffle.
    pub tie_average: bool,
    pub policy_population: u64,
    pub policy_fractions: Vec<f64>,
    pub cost_per_contact: f64,
    /// Cap on the number of test rows used for SHAP attribution.
    pub shap_sample: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            preset: None,
            synth_n: 20_000,
            schema: CsvSchema::default(),
            test_fraction: 0.2,
            seed: 42,
            models: vec![ModelId::S, ModelId::T, ModelId::X, ModelId::Cf],
            gbdt: GbdtParams::default(),
            forest: HonestTreeParams::default(),
            cf_replicates: DEFAULT_REPLICATES,
            cf_train_subsample: 1.0,
            grid_size: 100,
            tie_average: false,
            policy_population: 1_000_000,
            policy_fractions: vec![0.2, 0.5],
            cost_per_contact: 1.0,
            shap_sample: 2_000,
            out_dir: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("cannot parse '{s}' in list for key '{key}'")))
        })
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` assignment (config file line or CLI flag).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = Some(PathBuf::from(v)),
            "preset" => self.preset = Some(v.parse()?),
            "n" | "synth_n" => self.synth_n = parse_value(key, v)?,
            "outcome" => self.schema.outcome = v.parse()?,
            "feature_columns" => self.schema.feature_columns = parse_list(key, v)?,
            "treatment_column" => self.schema.treatment_column = v.to_string(),
            "visit_column" => self.schema.visit_column = v.to_string(),
            "conversion_column" => self.schema.conversion_column = v.to_string(),
            "test_fraction" => self.test_fraction = parse_value(key, v)?,
            "seed" => {
                let seed: u64 = parse_value(key, v)?;
                self.seed = seed;
                self.gbdt.seed = seed;
                self.forest.seed = seed;
            }
            "models" => self.models = parse_list(key, v)?,
            "num_trees" => self.gbdt.num_trees = parse_value(key, v)?,
            "learning_rate" => self.gbdt.learning_rate = parse_value(key, v)?,
            "max_leaves" => self.gbdt.max_leaves = parse_value(key, v)?,
            "min_samples_leaf" => self.gbdt.min_samples_leaf = parse_value(key, v)?,
            "l2_reg" => self.gbdt.l2_reg = parse_value(key, v)?,
            "feature_subsample" => self.gbdt.feature_subsample = parse_value(key, v)?,
            "cf_num_trees" => self.forest.num_trees = parse_value(key, v)?,
            "cf_tree_subsample" => self.forest.subsample_fraction = parse_value(key, v)?,
            "cf_honesty_fraction" => self.forest.honesty_fraction = parse_value(key, v)?,
            "cf_max_leaves" => self.forest.max_leaves = parse_value(key, v)?,
            "cf_min_treated_leaf" => self.forest.min_treated_leaf = parse_value(key, v)?,
            "cf_min_control_leaf" => self.forest.min_control_leaf = parse_value(key, v)?,
            "cf_replicates" => self.cf_replicates = parse_value(key, v)?,
            "cf_train_subsample" => self.cf_train_subsample = parse_value(key, v)?,
            "grid_size" => self.grid_size = parse_value(key, v)?,
            "tie_policy" => match v.to_ascii_lowercase().as_str() {
                "average" => self.tie_average = true,
                "shuffle" => self.tie_average = false,
                other => {
                    return Err(Error::Config(format!(
                        "unknown tie_policy '{other}', expected 'shuffle' or 'average'"
                    )))
                }
            },
            "policy_population" => self.policy_population = parse_value(key, v)?,
            "policy_fractions" => self.policy_fractions = parse_list(key, v)?,
            "cost_per_contact" => self.cost_per_contact = parse_value(key, v)?,
            "shap_sample" => self.shap_sample = parse_value(key, v)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file (hash comments allowed).
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.apply_kv(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.preset) {
            (None, None) => {
                return Err(Error::Config(
                    "either a data path or a preset must be given".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data path and preset are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model must be enabled".into()));
        }
        if self.preset.is_some() && self.synth_n < 10 {
            return Err(Error::Config("synthetic n must be at least 10".into()));
        }
        if self.grid_size < 10 {
            return Err(Error::Config("grid_size must be >= 10".into()));
        }
        if self
            .policy_fractions
            .iter()
            .any(|&f| !(0.0..=1.0).contains(&f))
        {
            return Err(Error::Config("policy fractions must lie in [0,1]".into()));
        }
        if self.shap_sample < 1 {
            return Err(Error::Config("shap_sample must be >= 1".into()));
        }
        if !(self.cf_train_subsample > 0.0 && self.cf_train_subsample <= 1.0) {
            return Err(Error::Config("cf_train_subsample must lie in (0,1]".into()));
        }
        self.gbdt
            .validate()
            .map_err(|e| Error::Config(format!("gbdt params: {e}")))?;
        self.forest
            .validate()
            .map_err(|e| Error::Config(format!("forest params: {e}")))?;
        Ok(())
    }

    fn tie_policy(&self, model_index: u64) -> TiePolicy {
        if self.tie_average {
            TiePolicy::Average
        } else {
            TiePolicy::Shuffle {
                seed: derive_seed(self.seed, domains::TIE_SHUFFLE, model_index),
            }
        }
    }
}

/// Everything the estimators consume, prepared once per run.
pub struct Prepared {
    /// Standardized features, no propensity column (causal forest view).
    pub std_all: UpliftDataset,
    /// Standardized features plus the appended propensity column
    /// (meta-learner view).
    pub appended_all: UpliftDataset,
    pub split: SplitIndices,
    pub standardization: StandardizationParams,
    pub propensity: PropensityReport,
    pub auc_test: f64,
}

/// Pipeline steps 1-2: ingest/generate, split, standardize, propensity.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let raw = match (&config.data, &config.preset) {
        (Some(path), None) => load_csv(path, &config.schema)?,
        (None, Some(preset)) => generate_dgp(&preset.spec(config.synth_n, config.seed))?.0,
        _ => return Err(Error::Config("exactly one data source required".into())),
    };
    let split = stratified_split(
        &raw,
        config.test_fraction,
        derive_seed(config.seed, domains::SPLIT, 0),
    )?;
    let (standardization, std_all) = standardize(&raw, &split.train)?;
    let train_std = std_all.subset(&split.train)?;
    let propensity = fit_propensity(&train_std)?;
    let test_std = std_all.subset(&split.test)?;
    let auc_test = propensity_auc(&propensity.model, &test_std)?;
    let appended_all = append_propensity(&std_all, &propensity.model)?;
    Ok(Prepared {
        std_all,
        appended_all,
        split,
        standardization,
        propensity,
        auc_test,
    })
}

/// Fitted estimators for one run.
#[derive(Serialize, Deserialize)]
pub struct ModelBundle {
    pub standardization: StandardizationParams,
    pub propensity: PropensityReport,
    pub schema: CsvSchema,
    pub s: Option<SLearnerModel>,
    pub t: Option<TLearnerModel>,
    pub x: Option<XLearnerModel>,
    pub cf: Option<CausalForestEnsemble>,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, self)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pipeline step 3: train every enabled estimator.
pub fn train_models(
    config: &RunConfig,
    prepared: &Prepared,
    timings: &mut BTreeMap<String, f64>,
) -> Result<ModelBundle> {
    let train_appended = prepared.appended_all.subset(&prepared.split.train)?;
    let mut bundle = ModelBundle {
        standardization: prepared.standardization.clone(),
        propensity: prepared.propensity.clone(),
        schema: config.schema.clone(),
        s: None,
        t: None,
        x: None,
        cf: None,
    };
    let enabled = |m: ModelId| config.models.contains(&m);
    if enabled(ModelId::S) {
        let start = Instant::now();
        bundle.s = Some(s_fit(&train_appended, &config.gbdt)?);
        timings.insert("train_s".into(), start.elapsed().as_secs_f64());
    }
    if enabled(ModelId::T) || enabled(ModelId::X) {
        let start = Instant::now();
        let t_model = t_fit(&train_appended, &config.gbdt)?;
        timings.insert("train_t".into(), start.elapsed().as_secs_f64());
        if enabled(ModelId::X) {
            let start = Instant::now();
            bundle.x = Some(x_fit_with_stage1(
                &train_appended,
                t_model.clone(),
                &prepared.propensity.model,
                &config.gbdt,
            )?);
            timings.insert("train_x".into(), start.elapsed().as_secs_f64());
        }
        if enabled(ModelId::T) {
            bundle.t = Some(t_model);
        }
    }
    if enabled(ModelId::Cf) {
        let start = Instant::now();
        let train_std = prepared.std_all.subset(&prepared.split.train)?;
        let cf_train = if config.cf_train_subsample < 1.0 {
            cf_subsample(
                &train_std,
                config.cf_train_subsample,
                derive_seed(config.seed, domains::SUBSAMPLE, 0),
            )?
        } else {
            train_std
        };
        bundle.cf = Some(CausalForestEnsemble::fit_bootstrap(
            &cf_train,
            &config.forest,
            config.cf_replicates,
        )?);
        timings.insert("train_cf".into(), start.elapsed().as_secs_f64());
    }
    Ok(bundle)
}

/// Per-model evaluation block of the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub cate_mean: f64,
    pub cate_std: f64,
    pub qini: f64,
    pub capture_at_20: f64,
    pub capture_at_50: f64,
    pub tie_policy: TiePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    pub n: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub treated_share: f64,
    pub outcome_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensitySection {
    pub auc_train: f64,
    pub auc_test: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySection {
    pub based_on: ModelId,
    #[serde(flatten)]
    pub report: PolicyReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentationSection {
    pub counts: SegmentCounts,
    pub persuadable_share: f64,
    pub sleeping_dog_share: f64,
    pub uncertain_share: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionSection {
    /// Additivity holds on this scale (log-odds margins, not probabilities).
    pub scale: String,
    pub sample_size: usize,
    pub ranking: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub dataset: DatasetSection,
    pub propensity: PropensitySection,
    pub models: BTreeMap<String, ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionSection>,
    pub timings: BTreeMap<String, f64>,
}

/// Artifacts that back the CSV outputs.
pub struct RunArtifacts {
    /// Original-dataset row indices of the test split.
    pub test_rows: Vec<usize>,
    pub estimates: Vec<(ModelId, CateEstimate)>,
    pub curves: Vec<(ModelId, QiniResult)>,
    pub intervals: Option<Vec<CateInterval>>,
    pub shap_ranking: Option<Vec<(String, f64)>>,
    /// (row, feature, shap value, standardized feature value)
    pub beeswarm: Option<Vec<(usize, String, f64, f64)>>,
}

fn subset_columns(ds: &UpliftDataset, rows: &[usize]) -> Vec<Vec<f64>> {
    ds.features()
        .iter()
        .map(|c| rows.iter().map(|&i| c[i]).collect())
        .collect()
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Parameter(m) => Error::Parameter(format!("[{name}] {m}")),
        Error::Fit(m) => Error::Fit(format!("[{name}] {m}")),
        Error::Evaluation(m) => Error::Evaluation(format!("[{name}] {m}")),
        Error::Config(m) => Error::Config(format!("[{name}] {m}")),
        other => other,
    })
}

/// Execute the full pipeline. When `config.out_dir` is set, the report and
/// all CSV artifacts are written there; partially written files are removed
/// if any step fails.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    let (report, artifacts) = execute(config)?;
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &report, &artifacts)?;
    }
    Ok(report)
}

/// Pipeline body without output writing; returns artifacts for callers
/// that post-process in memory.
pub fn execute(config: &RunConfig) -> Result<(RunReport, RunArtifacts)> {
    config.validate()?;
    let mut timings = BTreeMap::new();

    let start = Instant::now();
    let prepared = stage("prepare", prepare(config))?;
    timings.insert("prepare".into(), start.elapsed().as_secs_f64());

    let bundle = stage("train", train_models(config, &prepared, &mut timings))?;

    let test_rows = prepared.split.test.clone();
    let test_appended = subset_columns(&prepared.appended_all, &test_rows);
    let test_std = subset_columns(&prepared.std_all, &test_rows);
    let test_treatment: Vec<u8> = test_rows
        .iter()
        .map(|&i| prepared.std_all.treatment()[i])
        .collect();
    let test_outcome: Vec<u8> = test_rows
        .iter()
        .map(|&i| prepared.std_all.outcome()[i])
        .collect();

    let start = Instant::now();
    let mut estimates: Vec<(ModelId, CateEstimate)> = Vec::new();
    if let Some(s) = &bundle.s {
        estimates.push((ModelId::S, stage("predict_s", s_predict_cate(s, &test_appended))?));
    }
    if let Some(t) = &bundle.t {
        estimates.push((ModelId::T, stage("predict_t", t_predict_cate(t, &test_appended))?));
    }
    if let Some(x) = &bundle.x {
        estimates.push((
            ModelId::X,
            stage("predict_x", crate::meta::x_predict_cate(x, &test_appended))?,
        ));
    }
    let mut intervals = None;
    if let Some(cf) = &bundle.cf {
        let point = stage("predict_cf", cf.predict(&test_std))?;
        estimates.push((ModelId::Cf, CateEstimate::new(ModelId::Cf, point)));
        intervals = Some(stage("predict_cf", cf.predict_interval(&test_std))?);
    }
    timings.insert("predict".into(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let mut curves: Vec<(ModelId, QiniResult)> = Vec::new();
    let mut model_sections = BTreeMap::new();
    for (idx, (id, est)) in estimates.iter().enumerate() {
        let tie = config.tie_policy(idx as u64);
        let curve = stage(
            &format!("evaluate_{id}"),
            gain_curve(
                &est.tau_hat,
                &test_treatment,
                &test_outcome,
                config.grid_size,
                tie,
            ),
        )?;
        let capture_20 = capture_at(&curve, 0.2)?;
        let capture_50 = capture_at(&curve, 0.5)?;
        let q = qini(curve).with_model(*id);
        model_sections.insert(
            id.to_string(),
            ModelSection {
                cate_mean: est.summary.mean,
                cate_std: est.summary.std,
                qini: q.qini,
                capture_at_20: capture_20,
                capture_at_50: capture_50,
                tie_policy: tie,
            },
        );
        curves.push((*id, q));
    }
    timings.insert("evaluate".into(), start.elapsed().as_secs_f64());

    let segmentation = intervals.as_ref().map(|ivs| {
        let counts = segment_by_interval(ivs);
        let (p, s, u) = counts.shares();
        SegmentationSection {
            counts,
            persuadable_share: p,
            sleeping_dog_share: s,
            uncertain_share: u,
            replicates: config.cf_replicates,
        }
    });

    let start = Instant::now();
    let mut shap_ranking = None;
    let mut beeswarm = None;
    let mut shap_sample_size = 0;
    if let Some(t_model) = &bundle.t {
        let sampled = sample_rows(
            test_rows.len(),
            config.shap_sample,
            derive_seed(config.seed, domains::SHAP_SAMPLE, 0),
        );
        shap_sample_size = sampled.len();
        let sampled_rows: Vec<usize> = sampled.iter().map(|&p| test_rows[p]).collect();
        let shap_cols = subset_columns(&prepared.appended_all, &sampled_rows);
        let shap = stage("attribution", crate::shap::cate_shap(t_model, &shap_cols))?;
        let names = prepared.appended_all.feature_names();
        shap_ranking = Some(crate::shap::shap_summary(&shap, names));
        let mut rows = Vec::with_capacity(shap.n() * shap.d());
        for (local, &orig) in sampled_rows.iter().enumerate() {
            for j in 0..shap.d() {
                rows.push((
                    orig,
                    names[j].clone(),
                    shap.values[local][j],
                    shap_cols[j][local],
                ));
            }
        }
        beeswarm = Some(rows);
    }
    timings.insert("attribution".into(), start.elapsed().as_secs_f64());

    // policy simulation rides on the best-qini model's curve
    let policy = curves
        .iter()
        .max_by(|a, b| {
            a.1.qini
                .total_cmp(&b.1.qini)
                .then_with(|| b.0.cmp(&a.0))
        })
        .map(|(id, q)| -> Result<PolicySection> {
            Ok(PolicySection {
                based_on: *id,
                report: policy_simulate(
                    &q.curve,
                    config.policy_population,
                    config.cost_per_contact,
                    &config.policy_fractions,
                )?,
            })
        })
        .transpose()?;

    let ds = &prepared.std_all;
    let dataset = DatasetSection {
        n: ds.n(),
        d: ds.d(),
        n_train: prepared.split.train.len(),
        n_test: prepared.split.test.len(),
        treated_share: ds.treatment().iter().map(|&t| t as f64).sum::<f64>() / ds.n() as f64,
        outcome_rate: ds.outcome().iter().map(|&y| y as f64).sum::<f64>() / ds.n() as f64,
    };
    let propensity = PropensitySection {
        auc_train: prepared.propensity.auc,
        auc_test: prepared.auc_test,
        converged: prepared.propensity.converged,
        iterations: prepared.propensity.iterations,
    };
    let report = RunReport {
        config: config.clone(),
        dataset,
        propensity,
        models: model_sections,
        policy,
        segmentation,
        attribution: shap_ranking.as_ref().map(|ranking| AttributionSection {
            scale: "log-odds margin".to_string(),
            sample_size: shap_sample_size,
            ranking: ranking.clone(),
        }),
        timings,
    };
    let artifacts = RunArtifacts {
        test_rows,
        estimates,
        curves,
        intervals,
        shap_ranking,
        beeswarm,
    };
    Ok((report, artifacts))
}

/// Deterministic sample (without replacement) of `k` positions out of `n`.
fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let mut chosen = all[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

struct OutputTracker {
    written: Vec<PathBuf>,
}

impl OutputTracker {
    fn write(&mut self, path: PathBuf, content: &str) -> Result<()> {
        std::fs::write(&path, content)?;
        self.written.push(path);
        Ok(())
    }

    fn cleanup(&self) {
        for path in &self.written {
            let _ = std::fs::remove_file(path);
        }
    }
}

/// Write the report and every CSV artifact under `dir`, removing partial
/// outputs if any write fails.
pub fn write_outputs(dir: &Path, report: &RunReport, artifacts: &RunArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tracker = OutputTracker { written: vec![] };
    let result = write_outputs_inner(dir, report, artifacts, &mut tracker);
    if result.is_err() {
        tracker.cleanup();
    }
    result
}

fn write_outputs_inner(
    dir: &Path,
    report: &RunReport,
    artifacts: &RunArtifacts,
    tracker: &mut OutputTracker,
) -> Result<()> {
    tracker.write(
        dir.join("report.json"),
        &serde_json::to_string_pretty(report)?,
    )?;
    tracker.write(
        dir.join("resolved_config.json"),
        &serde_json::to_string_pretty(&report.config)?,
    )?;
    for (id, est) in &artifacts.estimates {
        let mut csv = String::from("index,tau_hat\n");
        for (row, tau) in artifacts.test_rows.iter().zip(&est.tau_hat) {
            csv.push_str(&format!("{row},{tau}\n"));
        }
        tracker.write(dir.join(format!("cate_{id}.csv")), &csv)?;
    }
    for (id, q) in &artifacts.curves {
        let mut csv = String::from("phi,gain\n");
        for (p, g) in q.curve.phi.iter().zip(&q.curve.gain) {
            csv.push_str(&format!("{p},{g}\n"));
        }
        tracker.write(dir.join(format!("gain_{id}.csv")), &csv)?;
    }
    if let Some(intervals) = &artifacts.intervals {
        let mut csv = String::from("index,tau_hat,lower,upper\n");
        for (row, iv) in artifacts.test_rows.iter().zip(intervals) {
            csv.push_str(&format!("{row},{},{},{}\n", iv.tau_hat, iv.lower, iv.upper));
        }
        tracker.write(dir.join("intervals_cf.csv"), &csv)?;
    }
    if let Some(ranking) = &artifacts.shap_ranking {
        let mut csv = String::from("feature,mean_abs_shap\n");
        for (name, value) in ranking {
            csv.push_str(&format!("{name},{value}\n"));
        }
        tracker.write(dir.join("shap_summary.csv"), &csv)?;
    }
    if let Some(beeswarm) = &artifacts.beeswarm {
        let mut csv = String::from("row,feature,shap,feature_value\n");
        for (row, feature, shap, value) in beeswarm {
            csv.push_str(&format!("{row},{feature},{shap},{value}\n"));
        }
        tracker.write(dir.join("shap_beeswarm.csv"), &csv)?;
    }
    Ok(())
}

/// Strip volatile fields (timings) for determinism comparisons.
pub fn canonical_report_json(report: &RunReport) -> Result<String> {
    let mut value = serde_json::to_value(report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timings");
    }
    Ok(serde_json::to_string_pretty(&value)?)
}

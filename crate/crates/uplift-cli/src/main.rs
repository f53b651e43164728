//! Command-line entry point for the uplift toolkit.
//!
//! Exit codes: 0 success, 2 config/parameter error, 3 data error,
//! 4 numeric or evaluation error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use uplift_core::data::{load_csv, UpliftDataset};
use uplift_core::error::Error;
use uplift_core::eval::{
    capture_at, gain_curve, policy_simulate, qini, segment_by_interval, GainCurve, TiePolicy,
};
use uplift_core::forest::CateInterval;
use uplift_core::meta::{
    s_predict_cate, t_predict_cate, x_predict_cate, CateEstimate, ModelId,
};
use uplift_core::pipeline::{
    execute, prepare, train_models, write_outputs, ModelBundle, RunConfig,
};
use uplift_core::propensity::{append_propensity, propensity_auc};
use uplift_core::seeding::{derive_seed, domains};
use uplift_core::shap::{cate_shap, shap_summary};
use uplift_core::synth::{generate_dgp, DgpPreset};

#[derive(Parser)]
#[command(
    name = "uplift",
    about = "Uplift modeling toolkit: CATE estimation, Qini evaluation, policy simulation, and attribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the run-config keys; any flag overrides the config file.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// Row count for synthetic presets.
    #[arg(long)]
    n: Option<String>,
    /// Outcome column selection: visit or conversion.
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    feature_columns: Option<String>,
    #[arg(long)]
    treatment_column: Option<String>,
    #[arg(long)]
    visit_column: Option<String>,
    #[arg(long)]
    conversion_column: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma list of models to train: s,t,x,cf.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    num_trees: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    max_leaves: Option<String>,
    #[arg(long)]
    min_samples_leaf: Option<String>,
    #[arg(long)]
    l2_reg: Option<String>,
    #[arg(long)]
    feature_subsample: Option<String>,
    #[arg(long)]
    cf_num_trees: Option<String>,
    #[arg(long)]
    cf_tree_subsample: Option<String>,
    #[arg(long)]
    cf_honesty_fraction: Option<String>,
    #[arg(long)]
    cf_max_leaves: Option<String>,
    #[arg(long)]
    cf_min_treated_leaf: Option<String>,
    #[arg(long)]
    cf_min_control_leaf: Option<String>,
    #[arg(long)]
    cf_replicates: Option<String>,
    #[arg(long)]
    cf_train_subsample: Option<String>,
    #[arg(long)]
    grid_size: Option<String>,
    /// shuffle or average.
    #[arg(long)]
    tie_policy: Option<String>,
    #[arg(long)]
    policy_population: Option<String>,
    #[arg(long)]
    policy_fractions: Option<String>,
    #[arg(long)]
    cost_per_contact: Option<String>,
    #[arg(long)]
    shap_sample: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            config.apply_kv_text(&text)?;
        }
        let overrides: [(&str, &Option<String>); 29] = [
            ("data", &self.data),
            ("preset", &self.preset),
            ("n", &self.n),
            ("outcome", &self.outcome),
            ("feature_columns", &self.feature_columns),
            ("treatment_column", &self.treatment_column),
            ("visit_column", &self.visit_column),
            ("conversion_column", &self.conversion_column),
            ("test_fraction", &self.test_fraction),
            ("seed", &self.seed),
            ("models", &self.models),
            ("num_trees", &self.num_trees),
            ("learning_rate", &self.learning_rate),
            ("max_leaves", &self.max_leaves),
            ("min_samples_leaf", &self.min_samples_leaf),
            ("l2_reg", &self.l2_reg),
            ("feature_subsample", &self.feature_subsample),
            ("cf_num_trees", &self.cf_num_trees),
            ("cf_tree_subsample", &self.cf_tree_subsample),
            ("cf_honesty_fraction", &self.cf_honesty_fraction),
            ("cf_max_leaves", &self.cf_max_leaves),
            ("cf_min_treated_leaf", &self.cf_min_treated_leaf),
            ("cf_min_control_leaf", &self.cf_min_control_leaf),
            ("cf_replicates", &self.cf_replicates),
            ("cf_train_subsample", &self.cf_train_subsample),
            ("grid_size", &self.grid_size),
            ("tie_policy", &self.tie_policy),
            ("policy_population", &self.policy_population),
            ("policy_fractions", &self.policy_fractions),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.apply_kv(key, v)?;
            }
        }
        if let Some(v) = &self.cost_per_contact {
            config.apply_kv("cost_per_contact", v)?;
        }
        if let Some(v) = &self.shap_sample {
            config.apply_kv("shap_sample", v)?;
        }
        if let Some(v) = &self.out_dir {
            config.apply_kv("out_dir", v)?;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus its ground-truth effects.
    SynthGen {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the enabled models and save them as a bundle.
    Train(ConfigFlags),
    /// Evaluate a saved bundle on a CSV dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid_size: usize,
        #[arg(long, default_value = "shuffle")]
        tie_policy: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Translate a gain curve into campaign targeting arithmetic.
    SimulatePolicy {
        /// CSV with phi,gain columns (as written by `run`/`evaluate`).
        #[arg(long)]
        gain: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        population: u64,
        #[arg(long, default_value_t = 1.0)]
        cost: f64,
        #[arg(long, default_value = "0.2,0.5")]
        fractions: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment customers from an intervals CSV.
    Segment {
        /// CSV with index,tau_hat,lower,upper columns.
        #[arg(long)]
        intervals: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SHAP attribution of the T-learner effect estimates.
    Attribute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 2_000)]
        sample: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full pipeline: preprocess, propensity, train, evaluate, attribute.
    Run(ConfigFlags),
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) => 2,
        Error::Schema { .. }
        | Error::Parse { .. }
        | Error::Domain { .. }
        | Error::Stratification { .. }
        | Error::Io(_)
        | Error::Csv(_) => 3,
        Error::Fit(_) | Error::Dimension { .. } | Error::Evaluation(_) | Error::Json(_) => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::SynthGen {
            preset,
            n,
            seed,
            out_dir,
        } => synth_gen(&preset, n, seed, &out_dir),
        Command::Train(flags) => train(&flags),
        Command::Evaluate {
            data,
            bundle,
            grid_size,
            tie_policy,
            seed,
            out_dir,
        } => evaluate(&data, &bundle, grid_size, &tie_policy, seed, &out_dir),
        Command::SimulatePolicy {
            gain,
            population,
            cost,
            fractions,
            out,
        } => simulate_policy(&gain, population, cost, &fractions, out.as_deref()),
        Command::Segment { intervals, out } => segment(&intervals, out.as_deref()),
        Command::Attribute {
            data,
            bundle,
            sample,
            seed,
            out_dir,
        } => attribute(&data, &bundle, sample, seed, &out_dir),
        Command::Run(flags) => run(&flags),
    }
}

fn synth_gen(preset: &str, n: usize, seed: u64, out_dir: &Path) -> Result<(), Error> {
    let preset: DgpPreset = preset.parse()?;
    let spec = preset.spec(n, seed);
    let (ds, truth) = generate_dgp(&spec)?;
    std::fs::create_dir_all(out_dir)?;
    let data_path = out_dir.join("data.csv");
    let truth_path = out_dir.join("ground_truth.csv");
    ds.write_csv(&data_path, &uplift_core::data::CsvSchema::default())?;
    truth.write_csv(&truth_path)?;
    println!(
        "wrote {} rows: {} and {}",
        ds.n(),
        data_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn train(flags: &ConfigFlags) -> Result<(), Error> {
    let config = flags.resolve()?;
    config.validate()?;
    let out_dir = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("train requires out_dir".into()))?;
    let mut timings = std::collections::BTreeMap::new();
    println!("preparing data...");
    let prepared = prepare(&config)?;
    println!(
        "training models ({})...",
        config
            .models
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let bundle = train_models(&config, &prepared, &mut timings)?;
    std::fs::create_dir_all(&out_dir)?;
    bundle.save(&out_dir.join("bundle.json"))?;
    std::fs::write(
        out_dir.join("resolved_config.json"),
        serde_json::to_string_pretty(&config)?,
    )?;
    println!("saved bundle to {}", out_dir.join("bundle.json").display());
    Ok(())
}

fn standardized_views(
    bundle: &ModelBundle,
    raw: &UpliftDataset,
) -> Result<(UpliftDataset, UpliftDataset), Error> {
    let std_ds = bundle.standardization.transform(raw)?;
    let appended = append_propensity(&std_ds, &bundle.propensity.model)?;
    Ok((std_ds, appended))
}

fn evaluate(
    data: &Path,
    bundle_path: &Path,
    grid_size: usize,
    tie_policy: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<(), Error> {
    let bundle = ModelBundle::load(bundle_path)?;
    let raw = load_csv(data, &bundle.schema)?;
    let (std_ds, appended) = standardized_views(&bundle, &raw)?;
    let estimates = score_bundle(&bundle, &std_ds, &appended)?;
    std::fs::create_dir_all(out_dir)?;
    let mut sections = serde_json::Map::new();
    sections.insert(
        "propensity_auc".into(),
        serde_json::json!(propensity_auc(&bundle.propensity.model, &std_ds)?),
    );
    let mut models = serde_json::Map::new();
    for (idx, (id, est)) in estimates.iter().enumerate() {
        let tie = match tie_policy.to_ascii_lowercase().as_str() {
            "average" => TiePolicy::Average,
            "shuffle" => TiePolicy::Shuffle {
                seed: derive_seed(seed, domains::TIE_SHUFFLE, idx as u64),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown tie_policy '{other}', expected 'shuffle' or 'average'"
                )))
            }
        };
        let curve = gain_curve(
            &est.tau_hat,
            raw.treatment(),
            raw.outcome(),
            grid_size,
            tie,
        )?;
        let c20 = capture_at(&curve, 0.2)?;
        let c50 = capture_at(&curve, 0.5)?;
        let q = qini(curve).with_model(*id);
        let mut gain_csv = String::from("phi,gain\n");
        for (p, g) in q.curve.phi.iter().zip(&q.curve.gain) {
            gain_csv.push_str(&format!("{p},{g}\n"));
        }
        std::fs::write(out_dir.join(format!("gain_{id}.csv")), gain_csv)?;
        let mut cate_csv = String::from("index,tau_hat\n");
        for (i, tau) in est.tau_hat.iter().enumerate() {
            cate_csv.push_str(&format!("{i},{tau}\n"));
        }
        std::fs::write(out_dir.join(format!("cate_{id}.csv")), cate_csv)?;
        models.insert(
            id.to_string(),
            serde_json::json!({
                "cate_mean": est.summary.mean,
                "cate_std": est.summary.std,
                "qini": q.qini,
                "capture_at_20": c20,
                "capture_at_50": c50,
            }),
        );
        println!(
            "{id}: qini {:.4}, capture@0.2 {:.3}, capture@0.5 {:.3}",
            q.qini, c20, c50
        );
    }
    sections.insert("models".into(), serde_json::Value::Object(models));
    std::fs::write(
        out_dir.join("evaluation.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(sections))?,
    )?;
    Ok(())
}

fn score_bundle(
    bundle: &ModelBundle,
    std_ds: &UpliftDataset,
    appended: &UpliftDataset,
) -> Result<Vec<(ModelId, CateEstimate)>, Error> {
    let mut estimates = Vec::new();
    if let Some(s) = &bundle.s {
        estimates.push((ModelId::S, s_predict_cate(s, appended.features())?));
    }
    if let Some(t) = &bundle.t {
        estimates.push((ModelId::T, t_predict_cate(t, appended.features())?));
    }
    if let Some(x) = &bundle.x {
        estimates.push((ModelId::X, x_predict_cate(x, appended.features())?));
    }
    if let Some(cf) = &bundle.cf {
        let point = cf.predict(std_ds.features())?;
        estimates.push((ModelId::Cf, CateEstimate::new(ModelId::Cf, point)));
    }
    if estimates.is_empty() {
        return Err(Error::Config("bundle contains no models".into()));
    }
    Ok(estimates)
}

fn read_two_column_csv(path: &Path, col_a: &str, col_b: &str) -> Result<Vec<(f64, f64)>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Evaluation(format!("{} is empty", path.display())))?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let ia = names
        .iter()
        .position(|&n| n == col_a)
        .ok_or_else(|| Error::Schema { column: col_a.into() })?;
    let ib = names
        .iter()
        .position(|&n| n == col_b)
        .ok_or_else(|| Error::Schema { column: col_b.into() })?;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize, col: &str| -> Result<f64, Error> {
            cells
                .get(idx)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row: lineno + 1,
                    column: col.to_string(),
                    value: cells.get(idx).unwrap_or(&"").to_string(),
                })
        };
        rows.push((parse(ia, col_a)?, parse(ib, col_b)?));
    }
    Ok(rows)
}

fn simulate_policy(
    gain_path: &Path,
    population: u64,
    cost: f64,
    fractions: &str,
    out: Option<&Path>,
) -> Result<(), Error> {
    let rows = read_two_column_csv(gain_path, "phi", "gain")?;
    if rows.len() < 2 {
        return Err(Error::Evaluation("gain curve needs at least two points".into()));
    }
    let curve = GainCurve {
        phi: rows.iter().map(|r| r.0).collect(),
        gain: rows.iter().map(|r| r.1).collect(),
        total_incremental: 0.0, // unknown from the CSV; not used here
        imputed: vec![],
        tie_policy: TiePolicy::Average,
    };
    let fractions: Vec<f64> = fractions
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad fraction '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    let report = policy_simulate(&curve, population, cost, &fractions)?;
    println!(
        "{:<14} {:>10} {:>10} {:>12} {:>12}",
        "strategy", "fraction", "contacts", "captured", "efficiency"
    );
    for row in &report.rows {
        println!(
            "{:<14} {:>10.3} {:>10} {:>11.1}% {:>11.2}x",
            row.strategy,
            row.fraction,
            row.contacts,
            row.captured * 100.0,
            row.efficiency
        );
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn segment(intervals_path: &Path, out: Option<&Path>) -> Result<(), Error> {
    let text = std::fs::read_to_string(intervals_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Evaluation("intervals file is empty".into()))?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let find = |col: &str| -> Result<usize, Error> {
        names
            .iter()
            .position(|&n| n == col)
            .ok_or_else(|| Error::Schema { column: col.into() })
    };
    let (it, il, iu) = (find("tau_hat")?, find("lower")?, find("upper")?);
    let mut intervals = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize, col: &str| -> Result<f64, Error> {
            cells
                .get(idx)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row: lineno + 1,
                    column: col.to_string(),
                    value: cells.get(idx).unwrap_or(&"").to_string(),
                })
        };
        intervals.push(CateInterval {
            tau_hat: parse(it, "tau_hat")?,
            lower: parse(il, "lower")?,
            upper: parse(iu, "upper")?,
            level: 0.95,
        });
    }
    let counts = segment_by_interval(&intervals);
    let (p, s, u) = counts.shares();
    println!("persuadable:  {:>8} ({:.2}%)", counts.persuadable, p * 100.0);
    println!("sleeping_dog: {:>8} ({:.2}%)", counts.sleeping_dog, s * 100.0);
    println!("uncertain:    {:>8} ({:.2}%)", counts.uncertain, u * 100.0);
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&counts)?)?;
    }
    Ok(())
}

fn attribute(
    data: &Path,
    bundle_path: &Path,
    sample: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(), Error> {
    let bundle = ModelBundle::load(bundle_path)?;
    let t_model = bundle
        .t
        .as_ref()
        .ok_or_else(|| Error::Config("bundle has no T-learner for attribution".into()))?;
    let raw = load_csv(data, &bundle.schema)?;
    let (_, appended) = standardized_views(&bundle, &raw)?;
    // deterministic row sample
    let rows: Vec<usize> = {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let k = sample.min(appended.n());
        let mut all: Vec<usize> = (0..appended.n()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            domains::SHAP_SAMPLE,
            0,
        ));
        all.shuffle(&mut rng);
        let mut chosen = all[..k].to_vec();
        chosen.sort_unstable();
        chosen
    };
    let cols: Vec<Vec<f64>> = appended
        .features()
        .iter()
        .map(|c| rows.iter().map(|&i| c[i]).collect())
        .collect();
    let shap = cate_shap(t_model, &cols)?;
    let names = appended.feature_names();
    let ranking = shap_summary(&shap, names);
    std::fs::create_dir_all(out_dir)?;
    let mut csv = String::from("feature,mean_abs_shap\n");
    for (name, value) in &ranking {
        csv.push_str(&format!("{name},{value}\n"));
    }
    std::fs::write(out_dir.join("shap_summary.csv"), csv)?;
    let mut bees = String::from("row,feature,shap,feature_value\n");
    for (local, &orig) in rows.iter().enumerate() {
        for j in 0..shap.d() {
            bees.push_str(&format!(
                "{orig},{},{},{}\n",
                names[j], shap.values[local][j], cols[j][local]
            ));
        }
    }
    std::fs::write(out_dir.join("shap_beeswarm.csv"), bees)?;
    println!("top features by mean |SHAP| (margin scale):");
    for (name, value) in ranking.iter().take(5) {
        println!("  {name:<12} {value:.6}");
    }
    Ok(())
}

fn run(flags: &ConfigFlags) -> Result<(), Error> {
    let config = flags.resolve()?;
    println!("running pipeline (seed {})...", config.seed);
    let (report, artifacts) = execute(&config)?;
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, &report, &artifacts)?;
        println!("outputs written to {}", dir.display());
    }
    println!(
        "dataset: n={} d={} treated_share={:.3} outcome_rate={:.4}",
        report.dataset.n, report.dataset.d, report.dataset.treated_share, report.dataset.outcome_rate
    );
    println!(
        "propensity AUC: train {:.4}, test {:.4}",
        report.propensity.auc_train, report.propensity.auc_test
    );
    println!(
        "{:<6} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "model", "cate_mean", "cate_std", "qini", "cap@20%", "cap@50%"
    );
    for (id, section) in &report.models {
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>8.4} {:>7.1}% {:>7.1}%",
            id,
            section.cate_mean,
            section.cate_std,
            section.qini,
            section.capture_at_20 * 100.0,
            section.capture_at_50 * 100.0
        );
    }
    if let Some(seg) = &report.segmentation {
        println!(
            "segments: persuadable {:.2}%, sleeping dog {:.2}%, uncertain {:.2}%",
            seg.persuadable_share * 100.0,
            seg.sleeping_dog_share * 100.0,
            seg.uncertain_share * 100.0
        );
    }
    if let Some(attr) = &report.attribution {
        let top: Vec<String> = attr
            .ranking
            .iter()
            .take(3)
            .map(|(name, _)| name.clone())
            .collect();
        println!("top attribution features: {}", top.join(", "));
    }
    Ok(())
}

//! Dev-time calibration probe (not part of the deliverable test suite).

use std::time::Instant;

use uplift_core::eval::{gain_curve, incremental_curve, qini, TiePolicy};
use uplift_core::forest::{CausalForestEnsemble, CausalForestModel, HonestTreeParams};
use uplift_core::gbdt::GbdtParams;
use uplift_core::meta::*;
use uplift_core::pipeline::{prepare, RunConfig};
use uplift_core::propensity::fit_propensity;
use uplift_core::synth::{generate_dgp, DgpPreset};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("constant");
    match mode {
        "constant" | "null" => nullity(mode),
        "f8dom" => f8dom(),
        "coverage" => coverage(args.get(2).map(|s| s.as_str()).unwrap_or("CONSTANT")),
        "propensity" => propensity(),
        _ => eprintln!("unknown mode {mode}"),
    }
}

fn nullity(mode: &str) {
    let preset = if mode == "constant" {
        DgpPreset::Constant
    } else {
        DgpPreset::Null
    };
    for seed in [42u64, 1, 2, 3, 4, 5] {
        let start = Instant::now();
        let config = RunConfig {
            preset: Some(preset),
            synth_n: 200_000,
            seed,
            ..RunConfig::default()
        };
        let mut config = config;
        config.gbdt.seed = seed;
        config.forest.seed = seed;
        let prepared = prepare(&config).unwrap();
        let train = prepared
            .appended_all
            .subset(&prepared.split.train)
            .unwrap();
        let test_rows = &prepared.split.test;
        let test_cols: Vec<Vec<f64>> = prepared
            .appended_all
            .features()
            .iter()
            .map(|c| test_rows.iter().map(|&i| c[i]).collect())
            .collect();
        let test_std: Vec<Vec<f64>> = prepared
            .std_all
            .features()
            .iter()
            .map(|c| test_rows.iter().map(|&i| c[i]).collect())
            .collect();
        let test_t: Vec<u8> = test_rows.iter().map(|&i| prepared.std_all.treatment()[i]).collect();
        let test_y: Vec<u8> = test_rows.iter().map(|&i| prepared.std_all.outcome()[i]).collect();

        let s = s_fit(&train, &config.gbdt).unwrap();
        let t = t_fit(&train, &config.gbdt).unwrap();
        let x = x_fit_with_stage1(&train, t.clone(), &prepared.propensity.model, &config.gbdt).unwrap();
        let train_std = prepared.std_all.subset(&prepared.split.train).unwrap();
        let cf = CausalForestModel::fit(&train_std, &config.forest).unwrap();

        let mut line = format!("seed {seed}:");
        for (name, tau) in [
            ("s", s_predict_cate(&s, &test_cols).unwrap().tau_hat),
            ("t", t_predict_cate(&t, &test_cols).unwrap().tau_hat),
            ("x", x_predict_cate(&x, &test_cols).unwrap().tau_hat),
            ("cf", cf.predict(&test_std).unwrap()),
        ] {
            let mean = tau.iter().sum::<f64>() / tau.len() as f64;
            let tie = TiePolicy::Shuffle { seed: 1000 + seed };
            let q = match gain_curve(&tau, &test_t, &test_y, 100, tie) {
                Ok(curve) => format!("{:+.4}", qini(curve).qini),
                Err(_) => "ERR".to_string(),
            };
            let inc = incremental_curve(&tau, &test_t, &test_y, 100, tie).unwrap();
            line.push_str(&format!(
                " {name}: mean {mean:+.4} qini {q} perrec {:+.6} |",
                inc.qini_per_record()
            ));
        }
        println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
    }
}

fn f8dom() {
    for seed in [42u64, 1, 2] {
        let start = Instant::now();
        let mut config = RunConfig {
            preset: Some(DgpPreset::F8dom),
            synth_n: 200_000,
            seed,
            ..RunConfig::default()
        };
        config.gbdt.seed = seed;
        let (_, truth) = generate_dgp(&DgpPreset::F8dom.spec(200_000, seed)).unwrap();
        let prepared = prepare(&config).unwrap();
        let train = prepared.appended_all.subset(&prepared.split.train).unwrap();
        let test_rows = &prepared.split.test;
        let test_cols: Vec<Vec<f64>> = prepared
            .appended_all
            .features()
            .iter()
            .map(|c| test_rows.iter().map(|&i| c[i]).collect())
            .collect();
        let true_tau: Vec<f64> = test_rows.iter().map(|&i| truth.tau[i]).collect();
        let test_t: Vec<u8> = test_rows.iter().map(|&i| prepared.std_all.treatment()[i]).collect();
        let test_y: Vec<u8> = test_rows.iter().map(|&i| prepared.std_all.outcome()[i]).collect();
        let tie = TiePolicy::Shuffle { seed: 77 };
        let oracle_q = qini(gain_curve(&true_tau, &test_t, &test_y, 100, tie).unwrap()).qini;

        let s = s_fit(&train, &config.gbdt).unwrap();
        let t = t_fit(&train, &config.gbdt).unwrap();
        let x = x_fit_with_stage1(&train, t.clone(), &prepared.propensity.model, &config.gbdt).unwrap();
        let mut line = format!("seed {seed}: oracle qini {oracle_q:.4} |");
        for (name, tau) in [
            ("s", s_predict_cate(&s, &test_cols).unwrap().tau_hat),
            ("t", t_predict_cate(&t, &test_cols).unwrap().tau_hat),
            ("x", x_predict_cate(&x, &test_cols).unwrap().tau_hat),
        ] {
            let corr = pearson(&tau, &true_tau);
            let q = qini(gain_curve(&tau, &test_t, &test_y, 100, tie).unwrap()).qini;
            line.push_str(&format!(
                " {name}: corr {corr:.3} qini {q:.4} ratio {:.2} |",
                q / oracle_q
            ));
        }
        println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
    }
}

fn coverage(preset_name: &str) {
    let preset: DgpPreset = preset_name.parse().unwrap();
    let start = Instant::now();
    let n = 100_000;
    let (ds, truth) = generate_dgp(&preset.spec(n, 42)).unwrap();
    let params = HonestTreeParams::default();
    let ensemble = CausalForestEnsemble::fit_bootstrap(&ds, &params, 50).unwrap();
    println!("fit {} replicates in {:.1}s", 50, start.elapsed().as_secs_f64());
    let start_pred = Instant::now();
    let intervals = ensemble.predict_interval(ds.features()).unwrap();
    println!("intervals in {:.1}s", start_pred.elapsed().as_secs_f64());
    let covered = intervals
        .iter()
        .zip(&truth.tau)
        .filter(|(iv, &t)| iv.lower <= t && t <= iv.upper)
        .count();
    let width: f64 = intervals.iter().map(|iv| iv.upper - iv.lower).sum::<f64>()
        / intervals.len() as f64;
    let mean_tau: f64 = intervals.iter().map(|iv| iv.tau_hat).sum::<f64>() / intervals.len() as f64;
    println!(
        "{preset_name}: coverage {:.3}, mean width {width:.4}, mean tau_hat {mean_tau:+.4}, total {:.0}s",
        covered as f64 / intervals.len() as f64,
        start.elapsed().as_secs_f64()
    );
}

fn propensity() {
    for seed in 0..10u64 {
        let (ds, _) = generate_dgp(&DgpPreset::F8dom.spec(100_000, seed)).unwrap();
        let report = fit_propensity(&ds).unwrap();
        println!("seed {seed}: AUC {:.4} (converged {})", report.auc, report.converged);
    }
}

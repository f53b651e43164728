//! Synthetic data-generating processes with known ground-truth effects.
//!
//! Features are i.i.d. uniform on [0,1]^d so effect functions have bounded
//! support and probability validity can be checked analytically. Treatment
//! is assigned completely at random (constant propensity), matching a
//! randomized experiment.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::UpliftDataset;
use crate::error::{Error, Result};

/// Baseline conversion-rate function P(Y(0)=1 | x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseRateFn {
    Constant(f64),
}

impl BaseRateFn {
    pub fn eval(&self, _x: &[f64]) -> f64 {
        match *self {
            BaseRateFn::Constant(p) => p,
        }
    }
}

/// Treatment-effect function tau(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TauFn {
    Zero,
    Constant(f64),
    /// a + b*x0 + c*x1
    Affine { a: f64, b: f64, c: f64 },
    /// slope * x[feature]
    SingleFeature { feature: usize, slope: f64 },
    /// slope * (x0 - 0.5): true sleeping dogs below the midpoint
    SignFlip { slope: f64 },
}

impl TauFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TauFn::Zero => 0.0,
            TauFn::Constant(t) => t,
            TauFn::Affine { a, b, c } => a + b * x[0] + c * x[1],
            TauFn::SingleFeature { feature, slope } => slope * x[feature],
            TauFn::SignFlip { slope } => slope * (x[0] - 0.5),
        }
    }
}

/// Full specification of a synthetic process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub d: usize,
    pub treatment_share: f64,
    pub base_rate: BaseRateFn,
    pub tau: TauFn,
    pub seed: u64,
}

/// The built-in presets used throughout the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DgpPreset {
    /// No effect anywhere: tau = 0, base rate 5%.
    Null,
    /// Homogeneous effect: tau = 0.02 on a 5% base rate.
    Constant,
    /// tau = 0.01 + 0.02*x0 + 0.02*x1 on a 5% base rate.
    Linear,
    /// tau = 0.06*x8 on a 4% base rate with 85/15 arms; one feature
    /// drives all heterogeneity, which attribution tests exploit.
    F8dom,
    /// tau = 0.04*(x0 - 0.5) on a 10% base rate: half the population are
    /// true sleeping dogs.
    SignFlip,
}

pub const ALL_PRESETS: [DgpPreset; 5] = [
    DgpPreset::Null,
    DgpPreset::Constant,
    DgpPreset::Linear,
    DgpPreset::F8dom,
    DgpPreset::SignFlip,
];

impl DgpPreset {
    pub fn spec(&self, n: usize, seed: u64) -> DgpSpec {
        let (treatment_share, base_rate, tau) = match self {
            DgpPreset::Null => (0.5, BaseRateFn::Constant(0.05), TauFn::Zero),
            DgpPreset::Constant => (0.5, BaseRateFn::Constant(0.05), TauFn::Constant(0.02)),
            DgpPreset::Linear => (
                0.5,
                BaseRateFn::Constant(0.05),
                TauFn::Affine {
                    a: 0.01,
                    b: 0.02,
                    c: 0.02,
                },
            ),
            DgpPreset::F8dom => (
                0.85,
                BaseRateFn::Constant(0.04),
                TauFn::SingleFeature {
                    feature: 8,
                    slope: 0.06,
                },
            ),
            DgpPreset::SignFlip => (
                0.5,
                BaseRateFn::Constant(0.10),
                TauFn::SignFlip { slope: 0.04 },
            ),
        };
        DgpSpec {
            n,
            d: 12,
            treatment_share,
            base_rate,
            tau,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DgpPreset::Null => "NULL",
            DgpPreset::Constant => "CONSTANT",
            DgpPreset::Linear => "LINEAR",
            DgpPreset::F8dom => "F8DOM",
            DgpPreset::SignFlip => "SIGNFLIP",
        }
    }
}

impl std::str::FromStr for DgpPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NULL" => Ok(DgpPreset::Null),
            "CONSTANT" => Ok(DgpPreset::Constant),
            "LINEAR" => Ok(DgpPreset::Linear),
            "F8DOM" => Ok(DgpPreset::F8dom),
            "SIGNFLIP" => Ok(DgpPreset::SignFlip),
            other => Err(Error::Config(format!(
                "unknown preset '{other}', expected one of NULL, CONSTANT, LINEAR, F8DOM, SIGNFLIP"
            ))),
        }
    }
}

/// True per-record effect and conditional outcome means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
}

impl GroundTruth {
    /// Write as CSV with columns tau,p0,p1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "tau,p0,p1")?;
        for i in 0..self.tau.len() {
            writeln!(out, "{},{},{}", self.tau[i], self.p0[i], self.p1[i])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Generate a dataset and its ground truth. Deterministic per spec+seed:
/// each record consumes exactly d+2 uniform draws (features, treatment,
/// outcome) from a ChaCha stream.
pub fn generate_dgp(spec: &DgpSpec) -> Result<(UpliftDataset, GroundTruth)> {
    if spec.n < 2 || spec.d < 1 {
        return Err(Error::Parameter("DGP needs n >= 2 and d >= 1".into()));
    }
    if !(spec.treatment_share > 0.0 && spec.treatment_share < 1.0) {
        return Err(Error::Parameter(format!(
            "treatment_share must lie in (0,1), got {}",
            spec.treatment_share
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.n); spec.d];
    let mut treatment = Vec::with_capacity(spec.n);
    let mut outcome = Vec::with_capacity(spec.n);
    let mut tau = Vec::with_capacity(spec.n);
    let mut p0 = Vec::with_capacity(spec.n);
    let mut p1 = Vec::with_capacity(spec.n);
    let mut x = vec![0.0_f64; spec.d];
    for _ in 0..spec.n {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = rng.gen::<f64>();
            features[j].push(*xj);
        }
        let base = spec.base_rate.eval(&x);
        let effect = spec.tau.eval(&x);
        let treated_rate = base + effect;
        if !(base > 0.0 && base < 1.0 && treated_rate > 0.0 && treated_rate < 1.0) {
            return Err(Error::Parameter(format!(
                "DGP probabilities out of (0,1): p0={base}, p1={treated_rate}"
            )));
        }
        let t = (rng.gen::<f64>() < spec.treatment_share) as u8;
        let p = if t == 1 { treated_rate } else { base };
        let y = (rng.gen::<f64>() < p) as u8;
        treatment.push(t);
        outcome.push(y);
        tau.push(effect);
        p0.push(base);
        p1.push(treated_rate);
    }
    let names = (0..spec.d).map(|j| format!("f{j}")).collect();
    let ds = UpliftDataset::new(features, names, treatment, outcome, None)?;
    Ok((ds, GroundTruth { tau, p0, p1 }))
}

/// Empirical average treatment effect: mean(Y|t=1) - mean(Y|t=0).
pub fn empirical_ate(ds: &UpliftDataset) -> f64 {
    let mut sums = [0.0_f64; 2];
    let mut counts = [0.0_f64; 2];
    for i in 0..ds.n() {
        let t = ds.treatment()[i] as usize;
        sums[t] += ds.outcome()[i] as f64;
        counts[t] += 1.0;
    }
    sums[1] / counts[1] - sums[0] / counts[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_preset_recovers_ate() {
        let spec = DgpPreset::Constant.spec(1_000_000, 42);
        let (ds, truth) = generate_dgp(&spec).unwrap();
        let ate = empirical_ate(&ds);
        assert!((ate - 0.02).abs() < 0.001, "ATE {ate}");
        assert!(truth.tau.iter().all(|&t| t == 0.02));
        for i in 0..truth.tau.len() {
            assert!((truth.p1[i] - truth.p0[i] - truth.tau[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn null_preset_has_no_effect() {
        let spec = DgpPreset::Null.spec(1_000_000, 7);
        let (ds, truth) = generate_dgp(&spec).unwrap();
        let ate = empirical_ate(&ds);
        assert!(ate.abs() < 0.001, "ATE {ate}");
        assert!(truth.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn f8dom_mirrors_imbalanced_design() {
        let spec = DgpPreset::F8dom.spec(200_000, 3);
        assert_eq!(spec.d, 12);
        let (ds, truth) = generate_dgp(&spec).unwrap();
        let mean_tau: f64 = truth.tau.iter().sum::<f64>() / truth.tau.len() as f64;
        assert!((mean_tau - 0.03).abs() < 0.001, "mean tau {mean_tau}");
        let share: f64 =
            ds.treatment().iter().map(|&t| t as f64).sum::<f64>() / ds.n() as f64;
        assert!((share - 0.85).abs() < 0.01, "treated share {share}");
    }

    #[test]
    fn signflip_has_true_sleeping_dogs() {
        let spec = DgpPreset::SignFlip.spec(10_000, 9);
        let (_, truth) = generate_dgp(&spec).unwrap();
        let n_neg = truth.tau.iter().filter(|&&t| t < 0.0).count();
        let n_pos = truth.tau.iter().filter(|&&t| t > 0.0).count();
        assert!(n_neg > 3000 && n_pos > 3000);
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = DgpPreset::Linear.spec(5_000, 31);
        let (a, ta) = generate_dgp(&spec).unwrap();
        let (b, tb) = generate_dgp(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.treatment(), b.treatment());
        assert_eq!(a.outcome(), b.outcome());
        assert_eq!(ta.tau, tb.tau);
    }

    #[test]
    fn invalid_probability_is_rejected() {
        let spec = DgpSpec {
            n: 100,
            d: 2,
            treatment_share: 0.5,
            base_rate: BaseRateFn::Constant(0.99),
            tau: TauFn::Constant(0.05),
            seed: 1,
        };
        assert!(generate_dgp(&spec).is_err());
    }

    #[test]
    fn per_bin_uplift_matches_tau_fn() {
        // Bin on the driving feature; empirical uplift per bin must sit
        // within 3 standard errors of the bin's mean true tau.
        let spec = DgpPreset::F8dom.spec(400_000, 12);
        let (ds, truth) = generate_dgp(&spec).unwrap();
        let bins = 5;
        for b in 0..bins {
            let lo = b as f64 / bins as f64;
            let hi = (b + 1) as f64 / bins as f64;
            let mut sums = [0.0_f64; 2];
            let mut counts = [0.0_f64; 2];
            let mut tau_sum = 0.0;
            let mut m = 0.0;
            for i in 0..ds.n() {
                let x8 = ds.feature(8)[i];
                if x8 >= lo && x8 < hi {
                    let t = ds.treatment()[i] as usize;
                    sums[t] += ds.outcome()[i] as f64;
                    counts[t] += 1.0;
                    tau_sum += truth.tau[i];
                    m += 1.0;
                }
            }
            let p1 = sums[1] / counts[1];
            let p0 = sums[0] / counts[0];
            let uplift = p1 - p0;
            let expected = tau_sum / m;
            let se = (p1 * (1.0 - p1) / counts[1] + p0 * (1.0 - p0) / counts[0]).sqrt();
            assert!(
                (uplift - expected).abs() <= 3.0 * se,
                "bin {b}: uplift {uplift}, expected {expected}, se {se}"
            );
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        use crate::data::{load_csv, CsvSchema};
        let spec = DgpPreset::Linear.spec(1_000, 77);
        let (ds, _) = generate_dgp(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("synth.csv");
        let schema = CsvSchema::default();
        ds.write_csv(&path, &schema).unwrap();
        let loaded = load_csv(&path, &schema).unwrap();
        assert_eq!(loaded.n(), ds.n());
        assert_eq!(loaded.treatment(), ds.treatment());
        assert_eq!(loaded.outcome(), ds.outcome());
        for j in 0..ds.d() {
            for i in 0..ds.n() {
                let a = ds.feature(j)[i];
                let b = loaded.feature(j)[i];
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "j={j} i={i}: {a} vs {b}"
                );
            }
        }
    }
}

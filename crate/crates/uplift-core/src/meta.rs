//! S-, T-, and X-learner CATE estimators over the GBDT base learner.
//!
//! Every learner returns per-record effect estimates on the probability
//! scale (a difference of outcome probabilities), so estimates always lie
//! in [-1, 1].

use serde::{Deserialize, Serialize};

use crate::data::UpliftDataset;
use crate::error::{Error, Result};
use crate::gbdt::{fit_on_columns, GbdtModel, GbdtParams, Loss};
use crate::logistic::LogisticModel;

/// Maximum histogram bins used when the learners bin raw features.
pub const META_MAX_BINS: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    S,
    T,
    X,
    Cf,
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelId::S => write!(f, "s"),
            ModelId::T => write!(f, "t"),
            ModelId::X => write!(f, "x"),
            ModelId::Cf => write!(f, "cf"),
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" => Ok(ModelId::S),
            "t" => Ok(ModelId::T),
            "x" => Ok(ModelId::X),
            "cf" => Ok(ModelId::Cf),
            other => Err(Error::Config(format!(
                "unknown model '{other}', expected one of s, t, x, cf"
            ))),
        }
    }
}

/// Mean and (population) standard deviation of per-record estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CateSummary {
    pub mean: f64,
    pub std: f64,
}

/// Per-record effect estimates from one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateEstimate {
    pub model_id: ModelId,
    pub tau_hat: Vec<f64>,
    pub summary: CateSummary,
}

impl CateEstimate {
    pub fn new(model_id: ModelId, tau_hat: Vec<f64>) -> Self {
        let n = tau_hat.len() as f64;
        let mean = tau_hat.iter().sum::<f64>() / n;
        let var = tau_hat.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        CateEstimate {
            model_id,
            tau_hat,
            summary: CateSummary {
                mean,
                std: var.sqrt(),
            },
        }
    }
}

fn check_both_arms(ds: &UpliftDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (i, &t) in ds.treatment().iter().enumerate() {
        if t == 1 {
            treated.push(i);
        } else {
            control.push(i);
        }
    }
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Fit(
            "both treatment arms must be present in the training data".into(),
        ));
    }
    Ok((treated, control))
}

fn subset_columns(columns: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|c| idx.iter().map(|&i| c[i]).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// S-learner
// ---------------------------------------------------------------------------

/// Single outcome model over (features ++ treatment indicator). The
/// treatment occupies the last input column as an unstandardized {0,1}
/// value so counterfactual predictions can hard-set it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SLearnerModel {
    pub model: GbdtModel,
    pub treatment_column: usize,
}

pub fn s_fit(train: &UpliftDataset, params: &GbdtParams) -> Result<SLearnerModel> {
    check_both_arms(train)?;
    let mut design: Vec<Vec<f64>> = train.features().to_vec();
    design.push(train.treatment_f64());
    let model = fit_on_columns(
        &design,
        &train.outcome_f64(),
        None,
        &params.clone().with_loss(Loss::Logistic),
        META_MAX_BINS,
    )?;
    Ok(SLearnerModel {
        model,
        treatment_column: train.d(),
    })
}

pub fn s_predict_cate(model: &SLearnerModel, columns: &[Vec<f64>]) -> Result<CateEstimate> {
    if columns.len() != model.treatment_column {
        return Err(Error::Dimension {
            expected: model.treatment_column,
            actual: columns.len(),
        });
    }
    let n = columns.first().map_or(0, |c| c.len());
    let mut design: Vec<Vec<f64>> = columns.to_vec();
    design.push(vec![1.0; n]);
    let p1 = model.model.predict(&design)?;
    *design.last_mut().unwrap() = vec![0.0; n];
    let p0 = model.model.predict(&design)?;
    let tau = p1.iter().zip(&p0).map(|(&a, &b)| a - b).collect();
    Ok(CateEstimate::new(ModelId::S, tau))
}

// ---------------------------------------------------------------------------
// T-learner
// ---------------------------------------------------------------------------

/// Independent outcome models per arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TLearnerModel {
    pub mu1: GbdtModel,
    pub mu0: GbdtModel,
}

pub fn t_fit(train: &UpliftDataset, params: &GbdtParams) -> Result<TLearnerModel> {
    let (treated, control) = check_both_arms(train)?;
    if treated.len() < params.min_samples_leaf {
        return Err(Error::Fit(format!(
            "treated arm has {} rows, fewer than min_samples_leaf={}",
            treated.len(),
            params.min_samples_leaf
        )));
    }
    if control.len() < params.min_samples_leaf {
        return Err(Error::Fit(format!(
            "control arm has {} rows, fewer than min_samples_leaf={}",
            control.len(),
            params.min_samples_leaf
        )));
    }
    let y = train.outcome_f64();
    let params = params.clone().with_loss(Loss::Logistic);
    let fit_arm = |idx: &[usize]| -> Result<GbdtModel> {
        let cols = subset_columns(train.features(), idx);
        let target: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        fit_on_columns(&cols, &target, None, &params, META_MAX_BINS)
    };
    Ok(TLearnerModel {
        mu1: fit_arm(&treated)?,
        mu0: fit_arm(&control)?,
    })
}

pub fn t_predict_cate(model: &TLearnerModel, columns: &[Vec<f64>]) -> Result<CateEstimate> {
    let p1 = model.mu1.predict(columns)?;
    let p0 = model.mu0.predict(columns)?;
    let tau = p1.iter().zip(&p0).map(|(&a, &b)| a - b).collect();
    Ok(CateEstimate::new(ModelId::T, tau))
}

// ---------------------------------------------------------------------------
// X-learner
// ---------------------------------------------------------------------------

/// Two-stage estimator: stage 1 is a T-learner; stage 2 regresses imputed
/// per-record effects with squared-loss models; prediction blends the two
/// stage-2 surfaces by the propensity score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XLearnerModel {
    pub stage1: TLearnerModel,
    pub tau1_model: GbdtModel,
    pub tau0_model: GbdtModel,
    pub propensity: LogisticModel,
}

/// Imputed effects: D1_i = y_i - mu0(x_i) on treated rows,
/// D0_i = mu1(x_i) - y_i on control rows.
pub fn impute_effects(
    stage1: &TLearnerModel,
    columns: &[Vec<f64>],
    outcome: &[f64],
    treated: &[usize],
    control: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let treated_cols = subset_columns(columns, treated);
    let control_cols = subset_columns(columns, control);
    let mu0_on_treated = stage1.mu0.predict(&treated_cols)?;
    let mu1_on_control = stage1.mu1.predict(&control_cols)?;
    let d1 = treated
        .iter()
        .zip(&mu0_on_treated)
        .map(|(&i, &m)| outcome[i] - m)
        .collect();
    let d0 = control
        .iter()
        .zip(&mu1_on_control)
        .map(|(&i, &m)| m - outcome[i])
        .collect();
    Ok((d1, d0))
}

/// Stage 2 alone: fit squared-loss effect models on already-imputed
/// effects. Exposed so tests can substitute oracle stage-1 imputations.
pub fn x_fit_stage2(
    columns: &[Vec<f64>],
    treated: &[usize],
    control: &[usize],
    d1: &[f64],
    d0: &[f64],
    params: &GbdtParams,
) -> Result<(GbdtModel, GbdtModel)> {
    let stage2_params = params.clone().with_loss(Loss::Squared);
    let tau1_model = fit_on_columns(
        &subset_columns(columns, treated),
        d1,
        None,
        &stage2_params,
        META_MAX_BINS,
    )?;
    let tau0_model = fit_on_columns(
        &subset_columns(columns, control),
        d0,
        None,
        &stage2_params,
        META_MAX_BINS,
    )?;
    Ok((tau1_model, tau0_model))
}

/// Fit reusing an existing stage-1 T-learner (the full pipeline shares it
/// with the standalone T-learner; results are identical either way).
pub fn x_fit_with_stage1(
    train: &UpliftDataset,
    stage1: TLearnerModel,
    propensity: &LogisticModel,
    params: &GbdtParams,
) -> Result<XLearnerModel> {
    let (treated, control) = check_both_arms(train)?;
    let outcome = train.outcome_f64();
    let (d1, d0) = impute_effects(&stage1, train.features(), &outcome, &treated, &control)?;
    let (tau1_model, tau0_model) =
        x_fit_stage2(train.features(), &treated, &control, &d1, &d0, params)?;
    Ok(XLearnerModel {
        stage1,
        tau1_model,
        tau0_model,
        propensity: propensity.clone(),
    })
}

pub fn x_fit(
    train: &UpliftDataset,
    propensity: &LogisticModel,
    params: &GbdtParams,
) -> Result<XLearnerModel> {
    let stage1 = t_fit(train, params)?;
    x_fit_with_stage1(train, stage1, propensity, params)
}

/// Propensity-weighted blend: tau(x) = e(x) tau0(x) + (1-e(x)) tau1(x).
/// The propensity model reads the leading columns it was trained on, so
/// the same call works with or without the appended propensity feature.
pub fn x_predict_cate(model: &XLearnerModel, columns: &[Vec<f64>]) -> Result<CateEstimate> {
    if columns.len() < model.propensity.d() {
        return Err(Error::Dimension {
            expected: model.propensity.d(),
            actual: columns.len(),
        });
    }
    let e = model.propensity.predict(&columns[..model.propensity.d()])?;
    let t1 = model.tau1_model.predict(columns)?;
    let t0 = model.tau0_model.predict(columns)?;
    let tau = e
        .iter()
        .zip(t1.iter().zip(&t0))
        .map(|(&ei, (&v1, &v0))| ei * v0 + (1.0 - ei) * v1)
        .collect();
    Ok(CateEstimate::new(ModelId::X, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::BinningScheme;
    use crate::gbdt::{DecisionTree, Node};
    use crate::synth::{generate_dgp, DgpPreset};

    fn constant_model(value: f64, d: usize, loss: Loss) -> GbdtModel {
        GbdtModel {
            params: GbdtParams {
                loss,
                ..GbdtParams::default()
            },
            base_score: value,
            trees: vec![],
            binning: BinningScheme::fit(&vec![vec![0.0, 1.0]; d], 2).unwrap(),
            train_loss: vec![],
        }
    }

    #[test]
    fn s_learner_without_treatment_splits_is_exactly_zero() {
        // one tree splitting on feature 0 only; treatment is column 2
        let tree = DecisionTree {
            nodes: vec![
                Node::Branch {
                    feature: 0,
                    bin: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    cover: 10.0,
                },
                Node::Leaf {
                    value: -0.3,
                    cover: 5.0,
                },
                Node::Leaf {
                    value: 0.4,
                    cover: 5.0,
                },
            ],
        };
        let model = SLearnerModel {
            model: GbdtModel {
                params: GbdtParams::default(),
                base_score: -1.0,
                trees: vec![tree],
                binning: BinningScheme::fit(&vec![vec![0.0, 1.0]; 3], 2).unwrap(),
                train_loss: vec![],
            },
            treatment_column: 2,
        };
        let cols = vec![vec![0.2, 0.7, 0.5], vec![0.9, 0.1, 0.3]];
        let est = s_predict_cate(&model, &cols).unwrap();
        assert!(est.tau_hat.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn s_learner_estimates_stay_in_probability_bounds() {
        let (ds, _) = generate_dgp(&DgpPreset::Linear.spec(5_000, 21)).unwrap();
        let params = GbdtParams {
            num_trees: 30,
            ..GbdtParams::default()
        };
        let model = s_fit(&ds, &params).unwrap();
        let est = s_predict_cate(&model, ds.features()).unwrap();
        assert!(est.tau_hat.iter().all(|&t| (-1.0..=1.0).contains(&t)));
        let again = s_predict_cate(&model, ds.features()).unwrap();
        assert_eq!(est.tau_hat, again.tau_hat);
    }

    #[test]
    fn t_learner_identical_arms_gives_zero_tau() {
        // duplicate every control row as a treated row: arms see the same data
        let (base, _) = generate_dgp(&DgpPreset::Constant.spec(2_000, 22)).unwrap();
        let mut features: Vec<Vec<f64>> = vec![Vec::new(); base.d()];
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        for i in 0..base.n() {
            for rep in 0..2 {
                for (j, col) in features.iter_mut().enumerate() {
                    col.push(base.feature(j)[i]);
                }
                treatment.push(rep as u8);
                outcome.push(base.outcome()[i]);
            }
        }
        let ds = UpliftDataset::new(
            features,
            base.feature_names().to_vec(),
            treatment,
            outcome,
            None,
        )
        .unwrap();
        let params = GbdtParams {
            num_trees: 20,
            ..GbdtParams::default()
        };
        let model = t_fit(&ds, &params).unwrap();
        let est = t_predict_cate(&model, ds.features()).unwrap();
        assert!(est.tau_hat.iter().all(|&t| t.abs() <= 1e-6));
    }

    #[test]
    fn t_learner_label_swap_negates_tau() {
        let (ds, _) = generate_dgp(&DgpPreset::Linear.spec(4_000, 23)).unwrap();
        let params = GbdtParams {
            num_trees: 15,
            ..GbdtParams::default()
        };
        let model = t_fit(&ds, &params).unwrap();
        let est = t_predict_cate(&model, ds.features()).unwrap();
        let swapped = UpliftDataset::new(
            ds.features().to_vec(),
            ds.feature_names().to_vec(),
            ds.treatment().iter().map(|&t| 1 - t).collect(),
            ds.outcome().to_vec(),
            None,
        )
        .unwrap();
        let model_sw = t_fit(&swapped, &params).unwrap();
        let est_sw = t_predict_cate(&model_sw, ds.features()).unwrap();
        for (a, b) in est.tau_hat.iter().zip(&est_sw.tau_hat) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn t_learner_tiny_arm_is_fit_error() {
        let mut treatment = vec![0u8; 100];
        treatment[0] = 1;
        treatment[1] = 1;
        let outcome: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let ds = UpliftDataset::new(
            vec![(0..100).map(|i| i as f64).collect()],
            vec!["x".into()],
            treatment,
            outcome,
            None,
        )
        .unwrap();
        let err = t_fit(&ds, &GbdtParams::default()).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn x_learner_blend_endpoints_are_exact() {
        let tau1 = constant_model(0.25, 3, Loss::Squared);
        let tau0 = constant_model(-0.15, 3, Loss::Squared);
        let stage1 = TLearnerModel {
            mu1: constant_model(0.5, 3, Loss::Logistic),
            mu0: constant_model(0.5, 3, Loss::Logistic),
        };
        let cols = vec![vec![0.1, 0.9], vec![0.4, 0.6], vec![0.7, 0.2]];
        let make = |intercept: f64| XLearnerModel {
            stage1: stage1.clone(),
            tau1_model: tau1.clone(),
            tau0_model: tau0.clone(),
            propensity: LogisticModel {
                weights: vec![0.0; 3],
                intercept,
            },
        };
        // e(x) = 0 -> tau1 exactly
        let est = x_predict_cate(&make(-800.0), &cols).unwrap();
        assert!(est.tau_hat.iter().all(|&t| t == 0.25));
        // e(x) = 1 -> tau0 exactly
        let est = x_predict_cate(&make(800.0), &cols).unwrap();
        assert!(est.tau_hat.iter().all(|&t| t == -0.15));
        // e(x) = 0.5 -> midpoint
        let est = x_predict_cate(&make(0.0), &cols).unwrap();
        let mid = (0.25_f64 + -0.15) / 2.0;
        assert!(est.tau_hat.iter().all(|&t| t == mid));
    }

    #[test]
    fn x_learner_oracle_stage1_recovers_constant_effect() {
        // substitute perfect stage-1 imputations computed from the ground
        // truth; stage 2 must recover the constant effect
        let (ds, truth) = generate_dgp(&DgpPreset::Constant.spec(100_000, 24)).unwrap();
        let (treated, control) = check_both_arms(&ds).unwrap();
        let y = ds.outcome_f64();
        let d1: Vec<f64> = treated.iter().map(|&i| y[i] - truth.p0[i]).collect();
        let d0: Vec<f64> = control.iter().map(|&i| truth.p1[i] - y[i]).collect();
        let params = GbdtParams {
            num_trees: 50,
            ..GbdtParams::default()
        };
        let (tau1_model, tau0_model) =
            x_fit_stage2(ds.features(), &treated, &control, &d1, &d0, &params).unwrap();
        let t1 = tau1_model.predict(ds.features()).unwrap();
        let t0 = tau0_model.predict(ds.features()).unwrap();
        let mean1: f64 = t1.iter().sum::<f64>() / t1.len() as f64;
        let mean0: f64 = t0.iter().sum::<f64>() / t0.len() as f64;
        assert!((mean1 - 0.02).abs() < 0.005, "tau1 mean {mean1}");
        assert!((mean0 - 0.02).abs() < 0.005, "tau0 mean {mean0}");
    }

    #[test]
    fn x_learner_all_treated_is_fit_error() {
        let ds = UpliftDataset::new(
            vec![vec![0.1, 0.2, 0.3, 0.4]],
            vec!["x".into()],
            vec![1, 1, 1, 1],
            vec![0, 1, 0, 1],
            None,
        )
        .unwrap();
        let prop = LogisticModel {
            weights: vec![0.0],
            intercept: 0.0,
        };
        assert!(matches!(
            x_fit(&ds, &prop, &GbdtParams::default()),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn cate_summary_is_recomputable() {
        let est = CateEstimate::new(ModelId::S, vec![0.1, 0.3, -0.2, 0.0]);
        let mean = (0.1 + 0.3 - 0.2 + 0.0) / 4.0;
        assert!((est.summary.mean - mean).abs() < 1e-15);
        let var = [0.1, 0.3, -0.2, 0.0]
            .iter()
            .map(|t| (t - mean).powi(2))
            .sum::<f64>()
            / 4.0;
        assert!((est.summary.std - var.sqrt()).abs() < 1e-15);
    }
}

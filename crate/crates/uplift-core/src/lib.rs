//! Uplift modeling toolkit.
//!
//! Estimates conditional average treatment effects (CATE) on randomized
//! experiment data with binary outcomes. The estimator family covers the
//! S/T/X meta-learners over a built-in histogram gradient-boosted tree
//! learner, plus an honest causal forest with bootstrap confidence
//! intervals. Evaluation is ranking-based: cumulative gain curves, the
//! Qini coefficient, targeting-policy simulation, and CI-based customer
//! segmentation. TreeSHAP attribution explains which features drive the
//! estimated effect heterogeneity.
//!
//! Synthetic data-generating processes with known ground-truth effects
//! ([`synth`]) provide the verification substrate for all of the above.

pub mod binning;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod gbdt;
pub mod logistic;
pub mod meta;
pub mod pipeline;
pub mod propensity;
pub mod seeding;
pub mod shap;
pub mod synth;

pub use error::{Error, Result};

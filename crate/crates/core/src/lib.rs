//! Inverse classification for IV fluid recommendations in sepsis.
//!
//! A mortality classifier `f` and an indirect feature estimator `H` are
//! trained on a cohort whose features are split into unchangeable (`U`),
//! indirectly changeable (`I`) and directly changeable (`D`) blocks. Given a
//! patient and a physician's prescription, [`invclass::optimize_recommendation`]
//! searches the budget-limited neighbourhood of the prescription for the
//! fluid vector that minimises predicted risk.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod serde_util;

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod featsel;
pub mod ife;
pub mod invclass;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod synth;

pub use bundle::{BundleMetadata, ModelBundle, RawPatient, RawRecommendRequest, RawRecommendation, RawSweep, RawSweepRequest};
pub use dataset::{Category, Dataset, FeatureMeta, FeaturePartition, PatientRecord, Scaler, SplitRatios};
pub use error::{Error, Result};
pub use experiment::{
    run_budget_sweep, run_robustness, summarize_avg_recs, train_pipeline, AvgRecReport, RobustnessReport, SweepReport, TrainConfig,
};
pub use featsel::{classifier_subset_eval, CseConfig, CseTrace, EvalMode, SelectionMetric};
pub use ife::{train_ife, IfeConfig, IfeModel, IfeVariant};
pub use invclass::{optimize_recommendation, project_feasible, OptimizeConfig, RecommendationRequest, RecommendationResult};
pub use metrics::Metrics;
pub use models::{train_classifier, ClassifierConfig, ClassifierModel, ClassifierVariant};
pub use nn::BatchMode;
pub use synth::{generate_synthetic, SyntheticSpec};

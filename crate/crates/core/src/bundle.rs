//! A trained classifier, IFE and scaler packaged together, with adapters that
//! speak raw clinical units.

use serde::{Deserialize, Serialize};

use crate::dataset::{apply_scaler, column_means, impute_with, Bound, Dataset, FeatureMeta, FeaturePartition, Scaler};
use crate::error::{Error, Result};
use crate::experiment::TrainOutcome;
use crate::ife::IfeModel;
use crate::invclass::{optimize_budgets, Composite, OptimizeConfig, RecommendationRequest, RecommendationResult};
use crate::models::ClassifierModel;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    /// Training-split means used to fill missing cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub classifier: ClassifierModel,
    pub ife: IfeModel,
    pub scaler: Scaler,
    pub meta: Vec<FeatureMeta>,
    pub partition: FeaturePartition,
    #[serde(default)]
    pub metadata: BundleMetadata,
}

/// Patient inputs in clinical units, each block in partition order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    pub x_u: Vec<f64>,
    pub x_i_observed: Vec<f64>,
    pub x_d_physician: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecommendRequest {
    #[serde(flatten)]
    pub patient: RawPatient,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecommendation {
    pub d_features: Vec<String>,
    pub d_units: Vec<String>,
    pub i_features: Vec<String>,
    pub budget: f64,
    pub x_d_physician_raw: Vec<f64>,
    pub x_d_optimized_raw: Vec<f64>,
    pub delta_raw: Vec<f64>,
    pub x_i_predicted_raw: Vec<f64>,
    pub prob_before: f64,
    pub prob_baseline: f64,
    pub prob_after: f64,
    /// The same result in normalized units.
    pub normalized: RecommendationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSweepRequest {
    pub budgets: Vec<f64>,
    pub request: RawPatient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: f64,
    pub prob_after: f64,
    pub x_d_optimized_raw: Vec<f64>,
    pub delta_raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSweep {
    pub d_features: Vec<String>,
    pub prob_before: f64,
    pub prob_baseline: f64,
    pub points: Vec<SweepPoint>,
}

/// Lightweight listing entry (no weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub id: String,
    pub classifier_variant: String,
    pub classifier_params: usize,
    pub ife_variant: String,
    pub features: Vec<FeatureMeta>,
    pub metadata: BundleMetadata,
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::InconsistentBundle(msg.into())
}

impl ModelBundle {
    pub fn new(classifier: ClassifierModel, ife: IfeModel, scaler: Scaler, meta: Vec<FeatureMeta>, metadata: BundleMetadata) -> Result<Self> {
        let partition = FeaturePartition::from_meta(&meta)?;
        let b = ModelBundle {
            id: None,
            classifier,
            ife,
            scaler,
            meta,
            partition,
            metadata,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn from_training(out: &TrainOutcome, mut metadata: BundleMetadata) -> Result<Self> {
        metadata.fill_values = Some(out.fill_values.clone());
        Self::new(
            out.classifier.clone(),
            out.ife.clone(),
            out.scaler.clone(),
            out.train.meta.clone(),
            metadata,
        )
    }

    /// Checks that every component agrees on feature names, order and
    /// partition.
    pub fn validate(&self) -> Result<()> {
        let names: Vec<&str> = self.meta.iter().map(|m| m.name.as_str()).collect();
        if self.classifier.feature_names().iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(inconsistent("classifier.feature_names does not match meta"));
        }
        if self.ife.feature_names().iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(inconsistent("ife.feature_names does not match classifier.feature_names"));
        }
        if self.scaler.names().ne(names.iter().copied()) {
            return Err(inconsistent("scaler feature names do not match classifier.feature_names"));
        }
        for (j, name) in names.iter().enumerate() {
            let Bound { min, max } = self.scaler.bound(j);
            if !(min.is_finite() && max.is_finite() && max >= min) {
                return Err(inconsistent(format!("scaler bound for `{name}` is invalid")));
            }
        }
        let from_meta = FeaturePartition::from_meta(&self.meta).map_err(|e| inconsistent(format!("meta: {e}")))?;
        if from_meta != self.partition {
            return Err(inconsistent("partition does not match meta categories"));
        }
        if self.ife.partition() != self.partition {
            return Err(inconsistent("ife partition does not match bundle partition"));
        }
        if self.partition.i_indices.is_empty() {
            return Err(inconsistent("bundle has no indirect features"));
        }
        Ok(())
    }

    /// Imputes and scales a raw dataset the way the training data was.
    /// Without stored fill values, the dataset's own column means are used.
    pub fn prepare(&self, raw: &Dataset) -> Result<Dataset> {
        if raw.meta.iter().map(|m| m.name.as_str()).ne(self.meta.iter().map(|m| m.name.as_str())) {
            return Err(inconsistent("dataset columns do not match the bundle's features"));
        }
        let fill = match &self.metadata.fill_values {
            Some(f) => f.clone(),
            None => column_means(raw)?,
        };
        let mut ds = apply_scaler(&impute_with(raw, &fill)?, &self.scaler)?;
        ds.meta.clone_from(&self.meta);
        ds.partition = self.partition.clone();
        Ok(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn summary(&self) -> BundleSummary {
        let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
        BundleSummary {
            id: self.id.clone().unwrap_or_default(),
            classifier_variant: name(serde_json::to_value(self.classifier.variant()).unwrap_or_default()),
            classifier_params: self.classifier.param_count(),
            ife_variant: name(serde_json::to_value(self.ife.variant()).unwrap_or_default()),
            features: self.meta.clone(),
            metadata: self.metadata.clone(),
        }
    }

    fn names_of(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&j| self.meta[j].name.clone()).collect()
    }

    fn check_block(field: &str, v: &[f64], n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput { field: field.into(), index });
        }
        Ok(())
    }

    /// Scales a raw patient into a normalized request. Unchangeable and
    /// indirect values are clamped into the fitted range; prescriptions
    /// outside it are rejected.
    pub fn normalize(&self, p: &RawPatient, budget: f64) -> Result<RecommendationRequest> {
        let part = &self.partition;
        Self::check_block("x_u", &p.x_u, part.u_indices.len())?;
        Self::check_block("x_i_observed", &p.x_i_observed, part.i_indices.len())?;
        Self::check_block("x_d_physician", &p.x_d_physician, part.d_indices.len())?;
        let scale = |idx: &[usize], v: &[f64]| -> Vec<f64> { idx.iter().zip(v).map(|(&j, &x)| self.scaler.transform(j, x)).collect() };
        for (k, (&j, &x)) in part.d_indices.iter().zip(&p.x_d_physician).enumerate() {
            let Bound { min, max } = self.scaler.bound(j);
            if x < min || x > max {
                return Err(Error::OutOfUnitRange {
                    field: "x_d_physician".into(),
                    index: k,
                    value: x,
                });
            }
        }
        Ok(RecommendationRequest {
            x_u: scale(&part.u_indices, &p.x_u),
            x_i_observed: scale(&part.i_indices, &p.x_i_observed),
            x_d_physician: scale(&part.d_indices, &p.x_d_physician),
            budget,
        })
    }

    /// Unchanged doses are echoed back exactly rather than round-tripped
    /// through the scaler.
    fn raw_d(&self, physician_raw: &[f64], r: &RecommendationResult) -> Vec<f64> {
        self.partition
            .d_indices
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                if r.delta[k] == 0.0 {
                    physician_raw[k]
                } else {
                    self.scaler.inverse(j, r.x_d_optimized[k])
                }
            })
            .collect()
    }

    fn raw_d_delta(&self, delta: &[f64]) -> Vec<f64> {
        self.partition
            .d_indices
            .iter()
            .zip(delta)
            .map(|(&j, &z)| {
                let Bound { min, max } = self.scaler.bound(j);
                z * (max - min)
            })
            .collect()
    }

    fn raw_result(&self, p: &RawPatient, budget: f64, r: RecommendationResult) -> RawRecommendation {
        let part = &self.partition;
        RawRecommendation {
            d_features: self.names_of(&part.d_indices),
            d_units: part.d_indices.iter().map(|&j| self.meta[j].units.clone()).collect(),
            i_features: self.names_of(&part.i_indices),
            budget,
            x_d_physician_raw: p.x_d_physician.clone(),
            x_d_optimized_raw: self.raw_d(&p.x_d_physician, &r),
            delta_raw: self.raw_d_delta(&r.delta),
            x_i_predicted_raw: part
                .i_indices
                .iter()
                .zip(&r.x_i_predicted)
                .map(|(&j, &u)| self.scaler.inverse(j, u))
                .collect(),
            prob_before: r.prob_before,
            prob_baseline: r.prob_baseline,
            prob_after: r.prob_after,
            normalized: r,
        }
    }

    pub fn recommend_raw(&self, req: &RawRecommendRequest, cfg: &OptimizeConfig) -> Result<RawRecommendation> {
        if req.budget.is_nan() {
            return Err(Error::NonFiniteInput {
                field: "budget".into(),
                index: 0,
            });
        }
        if req.budget < 0.0 {
            return Err(Error::NegativeBudget(req.budget));
        }
        let norm = self.normalize(&req.patient, req.budget)?;
        let r = Composite::new(&self.classifier, &self.ife)?.optimize(&norm, cfg, &[])?;
        Ok(self.raw_result(&req.patient, req.budget, r))
    }

    pub fn sweep_raw(&self, req: &RawSweepRequest, cfg: &OptimizeConfig) -> Result<RawSweep> {
        if req.budgets.is_empty() {
            return Err(Error::EmptyBudgets);
        }
        for (index, &b) in req.budgets.iter().enumerate() {
            if b.is_nan() || b.is_infinite() {
                return Err(Error::NonFiniteInput {
                    field: "budgets".into(),
                    index,
                });
            }
            if b < 0.0 {
                return Err(Error::NegativeBudget(b));
            }
        }
        let norm = self.normalize(&req.request, 0.0)?;
        let rs = optimize_budgets(&self.classifier, &self.ife, &norm, &req.budgets, cfg)?;
        let (prob_before, prob_baseline) = (rs[0].prob_before, rs[0].prob_baseline);
        let points = req
            .budgets
            .iter()
            .zip(rs)
            .map(|(&budget, r)| SweepPoint {
                budget,
                prob_after: r.prob_after,
                x_d_optimized_raw: self.raw_d(&req.request.x_d_physician, &r),
                delta_raw: self.raw_d_delta(&r.delta),
            })
            .collect();
        Ok(RawSweep {
            d_features: self.names_of(&self.partition.d_indices),
            prob_before,
            prob_baseline,
            points,
        })
    }
}

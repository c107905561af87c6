//! Classifier Subset Evaluation: randomised greedy forward selection.
//!
//! Each iteration draws a feature uniformly from the remaining pool, trains
//! the inner classifier on the selected set plus that feature and keeps it
//! only if the score strictly improves on the last accepted score. The first
//! drawn feature is always kept. Rejected features go back into the pool.
//! The search stops after `patience` consecutive rejections or when the pool
//! is empty.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_indices, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, THRESHOLD};
use crate::models::{predict_rows, train_classifier_rows, ClassifierConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Auc,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Stratified hold-out of this fraction of the training rows, fixed for
    /// the whole run.
    HeldOutSplit(f64),
    /// Score on the rows the inner classifier was trained on.
    TrainSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CseConfig {
    pub patience: usize,
    pub metric: SelectionMetric,
    pub seed: u64,
    pub inner_classifier: ClassifierConfig,
    pub eval_mode: EvalMode,
}

impl Default for CseConfig {
    fn default() -> Self {
        CseConfig {
            patience: 10,
            metric: SelectionMetric::Auc,
            seed: 0,
            inner_classifier: ClassifierConfig::feed_forward(3, 150),
            eval_mode: EvalMode::HeldOutSplit(0.25),
        }
    }
}

impl CseConfig {
    fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if let EvalMode::HeldOutSplit(f) = self.eval_mode {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("hold-out fraction {f} outside (0, 1)")));
            }
        }
        self.inner_classifier.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CseStep {
    /// 1-based iteration number.
    pub k: usize,
    pub feature: String,
    pub feature_index: usize,
    pub score: f64,
    /// Score minus the last accepted score.
    pub delta: f64,
    pub accepted: bool,
    /// Consecutive non-improving iterations after this one.
    pub non_improving: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CseTrace {
    pub steps: Vec<CseStep>,
    pub selected: Vec<String>,
}

impl CseTrace {
    /// One JSON object per iteration, newline separated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CseOutcome {
    /// Selected feature names, in acceptance order.
    pub selected: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub trace: CseTrace,
}

/// The search loop with a pluggable scorer. `score` receives the candidate
/// feature set (ascending indices) and returns the metric value.
pub fn subset_search<F>(n_features: usize, patience: usize, seed: u64, mut score: F) -> Result<(Vec<usize>, Vec<CseStep>)>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if n_features == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    if patience == 0 {
        return Err(Error::InvalidConfig("patience must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..n_features).collect();
    let mut selected: Vec<usize> = Vec::new();
    let mut best = 0.0;
    let mut non_improving = 0usize;
    let mut steps = Vec::new();

    loop {
        let f = pool.remove(rng.gen_range(0..pool.len()));
        selected.push(f);
        let mut candidate = selected.clone();
        candidate.sort_unstable();
        let c = score(&candidate)?;
        let delta = c - best;
        let accepted = !(delta <= 0.0 && selected.len() != 1);
        if accepted {
            best = c;
            non_improving = 0;
        } else {
            selected.pop();
            pool.push(f);
            non_improving += 1;
        }
        steps.push(CseStep {
            k: steps.len() + 1,
            feature: String::new(),
            feature_index: f,
            score: c,
            delta,
            accepted,
            non_improving,
        });
        if non_improving == patience || pool.is_empty() {
            break;
        }
    }
    Ok((selected, steps))
}

pub fn classifier_subset_eval(train: &Dataset, cfg: &CseConfig) -> Result<CseOutcome> {
    cfg.validate()?;
    if train.n_features() == 0 {
        return Err(Error::EmptyFeatureSet);
    }
    if train.records.iter().flat_map(|r| &r.x).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("training data contains missing or non-finite values".into()));
    }
    let labels = train.labels();
    let (fit_idx, eval_idx) = match cfg.eval_mode {
        EvalMode::TrainSet => {
            let all: Vec<usize> = (0..train.len()).collect();
            (all.clone(), all)
        }
        EvalMode::HeldOutSplit(frac) => {
            let mut parts = stratified_indices(&labels, &[1.0 - frac, frac], cfg.seed)?;
            let eval = parts.pop().expect("two parts");
            (parts.pop().expect("two parts"), eval)
        }
    };
    let names = train.feature_names();
    let project =
        |idx: &[usize], cols: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| cols.iter().map(|&j| train.records[i].x[j]).collect()).collect() };
    let fit_labels: Vec<u8> = fit_idx.iter().map(|&i| labels[i]).collect();
    let eval_labels: Vec<u8> = eval_idx.iter().map(|&i| labels[i]).collect();

    let (selected_indices, mut steps) = subset_search(train.n_features(), cfg.patience, cfg.seed, |cols| {
        let col_names = cols.iter().map(|&j| names[j].clone()).collect();
        let (model, _) = train_classifier_rows(&project(&fit_idx, cols), &fit_labels, col_names, &cfg.inner_classifier)?;
        let scores = predict_rows(&model, &project(&eval_idx, cols))?;
        match cfg.metric {
            SelectionMetric::Auc => metrics::auc(&scores, &eval_labels),
            SelectionMetric::Accuracy => metrics::accuracy(&scores, &eval_labels, THRESHOLD),
        }
    })?;
    for s in &mut steps {
        s.feature = names[s.feature_index].clone();
    }
    let selected: Vec<String> = selected_indices.iter().map(|&j| names[j].clone()).collect();
    Ok(CseOutcome {
        selected: selected.clone(),
        selected_indices,
        trace: CseTrace { steps, selected },
    })
}

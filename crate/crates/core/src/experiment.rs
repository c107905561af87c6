//! Evaluation protocol: model training pipeline, budget sweeps, the
//! initialization robustness comparison and average recommendations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_scaler, column_means, fit_scaler, impute_with, stratified_split, Dataset, FeaturePartition, Scaler, SplitRatios};
use crate::error::{Error, Result};
use crate::ife::{default_ife_grid, evaluate_ife, ife_grid_search, IfeConfig, IfeGridRow, IfeModel};
use crate::invclass::{optimize_budgets, Composite, OptimizeConfig, RecommendationRequest, RecommendationResult};
use crate::metrics::{Metrics, RegressionMetrics, THRESHOLD};
use crate::models::{default_grid, evaluate, grid_search, ClassifierConfig, ClassifierModel, GridRow};

/// `{0.1, 0.2, ..., 1.0}`.
pub fn default_budgets() -> Vec<f64> {
    (1..=10).map(|k| f64::from(k) / 10.0).collect()
}

/// One request per record, with the recorded prescription as the starting
/// point and a zero budget.
pub fn requests_from(ds: &Dataset) -> Vec<RecommendationRequest> {
    let p = &ds.partition;
    ds.records
        .iter()
        .map(|r| RecommendationRequest {
            x_u: FeaturePartition::gather(&p.u_indices, &r.x),
            x_i_observed: FeaturePartition::gather(&p.i_indices, &r.x),
            x_d_physician: FeaturePartition::gather(&p.d_indices, &r.x),
            budget: 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub split: SplitRatios,
    pub classifier_grid: Vec<ClassifierConfig>,
    pub ife_grid: Vec<IfeConfig>,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig {
            seed,
            split: SplitRatios::default(),
            classifier_grid: default_grid(seed),
            ife_grid: default_ife_grid(seed),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: ClassifierModel,
    pub ife: IfeModel,
    pub scaler: Scaler,
    pub fill_values: Vec<f64>,
    pub classifier_table: Vec<GridRow>,
    pub classifier_best: usize,
    pub ife_table: Vec<IfeGridRow>,
    pub ife_best: usize,
    pub test_metrics: Metrics,
    pub test_ife_metrics: RegressionMetrics,
    /// Imputed and scaled splits.
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Split, impute with training means, scale with training min/max, then grid
/// search the classifier and the IFE.
pub fn train_pipeline(raw: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train, val, test) = stratified_split(raw, cfg.split, cfg.seed)?;
    let fill = column_means(&train)?;
    let train = impute_with(&train, &fill)?;
    let scaler = fit_scaler(&train)?;
    let train = apply_scaler(&train, &scaler)?;
    let val = apply_scaler(&impute_with(&val, &fill)?, &scaler)?;
    let test = apply_scaler(&impute_with(&test, &fill)?, &scaler)?;

    let cls = grid_search(&train, &val, &cfg.classifier_grid)?;
    let ife = ife_grid_search(&train, &val, &cfg.ife_grid)?;
    let test_metrics = evaluate(&cls.best, &test)?;
    let test_ife_metrics = evaluate_ife(&ife.best, &test)?;
    Ok(TrainOutcome {
        classifier: cls.best,
        ife: ife.best,
        scaler,
        fill_values: fill,
        classifier_table: cls.table,
        classifier_best: cls.best_index,
        ife_table: ife.table,
        ife_best: ife.best_index,
        test_metrics,
        test_ife_metrics,
        train,
        validation: val,
        test,
    })
}

fn csv_string<F>(write: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Classifier grid report, one row per configuration.
pub fn classifier_table_csv(rows: &[GridRow]) -> Result<String> {
    csv_string(|w| {
        w.write_record([
            "variant",
            "hidden_nodes",
            "epochs",
            "train_accuracy",
            "train_auc",
            "val_accuracy",
            "val_auc",
        ])?;
        for r in rows {
            let variant = serde_json::to_value(r.config.variant)?;
            w.write_record([
                variant.as_str().unwrap_or_default().to_string(),
                r.config.hidden_nodes.to_string(),
                r.config.epochs.to_string(),
                r.train.accuracy.to_string(),
                r.train.auc.to_string(),
                r.validation.accuracy.to_string(),
                r.validation.auc.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn ife_table_csv(rows: &[IfeGridRow]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["hidden_nodes", "epochs", "train_mse", "train_mae", "val_mse", "val_mae"])?;
        for r in rows {
            w.write_record([
                r.config.hidden_nodes.to_string(),
                r.config.epochs.to_string(),
                r.train.mse.to_string(),
                r.train.mae.to_string(),
                r.validation.mse.to_string(),
                r.validation.mae.to_string(),
            ])?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: f64,
    pub mean_prob: f64,
    pub std_prob: f64,
    pub mean_rel_improvement: f64,
    pub std_rel_improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_instances: usize,
    /// Mean risk at the recorded prescriptions with observed indirect values.
    pub mean_prob_before: f64,
    /// Mean risk at the recorded prescriptions with estimated indirect values.
    pub mean_prob_baseline: f64,
    pub rows: Vec<BudgetRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["budget", "mean_prob", "std_prob", "mean_rel_improvement", "std_rel_improvement"])?;
            for r in &self.rows {
                w.write_record([
                    r.budget.to_string(),
                    r.mean_prob.to_string(),
                    r.std_prob.to_string(),
                    r.mean_rel_improvement.to_string(),
                    r.std_rel_improvement.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

/// Per-instance results of a sweep. `results[i][k]` is instance `i` at
/// budget `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub budgets: Vec<f64>,
    pub results: Vec<Vec<RecommendationResult>>,
    pub report: SweepReport,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_budgets(budgets: &[f64]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::EmptyBudgets);
    }
    if let Some(&b) = budgets.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::NegativeBudget(b));
    }
    Ok(())
}

fn sweep_requests(comp: &Composite<'_>, requests: &[RecommendationRequest], budgets: &[f64], cfg: &OptimizeConfig) -> Result<SweepRun> {
    check_budgets(budgets)?;
    if requests.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results: Vec<Vec<RecommendationResult>> = requests
        .par_iter()
        .map(|req| {
            optimize_budgets(comp.classifier(), comp.ife(), req, budgets, cfg)
                .map(|rs| rs.into_iter().map(RecommendationResult::without_trajectory).collect())
        })
        .collect::<Result<_>>()?;
    let rows = budgets
        .iter()
        .enumerate()
        .map(|(k, &budget)| {
            let (mean_prob, std_prob) = mean_std(results.iter().map(|r| r[k].prob_after));
            let (mean_rel, std_rel) = mean_std(results.iter().map(|r| (r[k].prob_baseline - r[k].prob_after) / r[k].prob_baseline));
            BudgetRow {
                budget,
                mean_prob,
                std_prob,
                mean_rel_improvement: mean_rel,
                std_rel_improvement: std_rel,
            }
        })
        .collect();
    let n = results.len() as f64;
    let report = SweepReport {
        n_instances: results.len(),
        mean_prob_before: results.iter().map(|r| r[0].prob_before).sum::<f64>() / n,
        mean_prob_baseline: results.iter().map(|r| r[0].prob_baseline).sum::<f64>() / n,
        rows,
    };
    Ok(SweepRun {
        budgets: budgets.to_vec(),
        results,
        report,
    })
}

/// Optimizes every test record at every budget, starting from its recorded
/// prescription.
pub fn run_budget_sweep(f: &ClassifierModel, h: &IfeModel, test: &Dataset, budgets: &[f64], cfg: &OptimizeConfig) -> Result<SweepRun> {
    let comp = Composite::new(f, h)?;
    sweep_requests(&comp, &requests_from(test), budgets, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub init_range: (f64, f64),
    pub seed: u64,
    pub hitl: SweepReport,
    pub random: SweepReport,
}

impl RobustnessReport {
    /// Random-arm mean minus HITL-arm mean at each budget.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.hitl
            .rows
            .iter()
            .zip(&self.random.rows)
            .map(|(a, b)| (a.budget, b.mean_prob - a.mean_prob))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["budget", "hitl_mean_prob", "hitl_std_prob", "random_mean_prob", "random_std_prob"])?;
            for (a, b) in self.hitl.rows.iter().zip(&self.random.rows) {
                w.write_record([
                    a.budget.to_string(),
                    a.mean_prob.to_string(),
                    a.std_prob.to_string(),
                    b.mean_prob.to_string(),
                    b.std_prob.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

/// Runs the sweep twice on the same records: once from the recorded
/// prescriptions and once from random starting points drawn uniformly from
/// `init_range` per direct feature. In the random arm the budget is measured
/// from the random starting point.
pub fn run_robustness(
    f: &ClassifierModel,
    h: &IfeModel,
    test: &Dataset,
    budgets: &[f64],
    cfg: &OptimizeConfig,
    init_range: (f64, f64),
    seed: u64,
) -> Result<RobustnessReport> {
    let (lo, hi) = init_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidConfig(format!("init range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")));
    }
    let comp = Composite::new(f, h)?;
    let hitl_reqs = requests_from(test);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_reqs: Vec<RecommendationRequest> = hitl_reqs
        .iter()
        .map(|r| RecommendationRequest {
            x_d_physician: r
                .x_d_physician
                .iter()
                .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                .collect(),
            ..r.clone()
        })
        .collect();
    let hitl = sweep_requests(&comp, &hitl_reqs, budgets, cfg)?.report;
    let random = sweep_requests(&comp, &random_reqs, budgets, cfg)?.report;
    Ok(RobustnessReport {
        init_range,
        seed,
        hitl,
        random,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    /// Predicted risk above the threshold.
    Positive,
    Negative,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Positive => "positive",
            Stratum::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgRecRow {
    pub budget: f64,
    pub feature: String,
    pub stratum: Stratum,
    pub mean_delta: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgRecReport {
    pub threshold: f64,
    pub rows: Vec<AvgRecRow>,
}

impl AvgRecReport {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(["budget", "feature", "stratum", "mean_delta", "n"])?;
            for r in &self.rows {
                w.write_record([
                    r.budget.to_string(),
                    r.feature.clone(),
                    r.stratum.as_str().to_string(),
                    r.mean_delta.to_string(),
                    r.n.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

/// Mean recommended change per direct feature, per budget, split by whether
/// the instance's `prob_before` exceeds `threshold`. A stratum with no
/// instances produces no rows.
pub fn summarize_avg_recs(budgets: &[f64], results: &[Vec<RecommendationResult>], d_names: &[String], threshold: f64) -> Result<AvgRecReport> {
    if results.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in results {
        if r.len() != budgets.len() {
            return Err(Error::DimensionMismatch {
                expected: budgets.len(),
                got: r.len(),
            });
        }
        for res in r {
            if res.delta.len() != d_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: d_names.len(),
                    got: res.delta.len(),
                });
            }
        }
    }
    let mut rows = Vec::new();
    for (k, &budget) in budgets.iter().enumerate() {
        for stratum in [Stratum::Positive, Stratum::Negative] {
            let members: Vec<&RecommendationResult> = results
                .iter()
                .map(|r| &r[k])
                .filter(|r| (r.prob_before > threshold) == (stratum == Stratum::Positive))
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, name) in d_names.iter().enumerate() {
                let sum: f64 = members.iter().map(|r| r.delta[j]).sum();
                rows.push(AvgRecRow {
                    budget,
                    feature: name.clone(),
                    stratum,
                    mean_delta: sum / members.len() as f64,
                    n: members.len(),
                });
            }
        }
    }
    Ok(AvgRecReport { threshold, rows })
}

/// `summarize_avg_recs` at the standard threshold for a finished sweep.
pub fn avg_recs_for(run: &SweepRun, d_names: &[String]) -> Result<AvgRecReport> {
    summarize_avg_recs(&run.budgets, &run.results, d_names, THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(prob_before: f64, delta: Vec<f64>) -> RecommendationResult {
        RecommendationResult {
            x_d_optimized: vec![0.0; delta.len()],
            x_i_predicted: vec![],
            delta,
            prob_before,
            prob_baseline: prob_before,
            prob_after: prob_before,
            trajectory: vec![],
            converged: true,
            iters_used: 1,
        }
    }

    #[test]
    fn default_budget_grid() {
        let b = default_budgets();
        assert_eq!(b.len(), 10);
        assert_eq!(b[0], 0.1);
        assert_eq!(b[9], 1.0);
    }

    #[test]
    fn avg_recs_hand_fixture() {
        let names = vec!["lr".to_string(), "ns".to_string()];
        let results = vec![
            vec![result(0.8, vec![0.1, -0.2])],
            vec![result(0.6, vec![0.3, 0.0])],
            vec![result(0.2, vec![0.05, 0.1])],
            vec![result(0.5, vec![-0.05, 0.3])],
        ];
        let rep = summarize_avg_recs(&[0.3], &results, &names, 0.5).unwrap();
        assert_eq!(rep.rows.len(), 4);
        let get = |s: Stratum, f: &str| rep.rows.iter().find(|r| r.stratum == s && r.feature == f).unwrap();
        assert_eq!(get(Stratum::Positive, "lr").mean_delta, (0.1 + 0.3) / 2.0);
        assert_eq!(get(Stratum::Positive, "ns").mean_delta, (-0.2 + 0.0) / 2.0);
        assert_eq!(get(Stratum::Negative, "lr").mean_delta, (0.05 + -0.05) / 2.0);
        assert_eq!(get(Stratum::Negative, "ns").mean_delta, (0.1 + 0.3) / 2.0);
        // 0.5 is not above the threshold
        assert_eq!(get(Stratum::Negative, "ns").n, 2);
        assert_eq!(get(Stratum::Positive, "ns").n + get(Stratum::Negative, "ns").n, 4);
    }

    #[test]
    fn avg_recs_empty_stratum_is_absent() {
        let names = vec!["lr".to_string()];
        let results = vec![vec![result(0.1, vec![0.0])], vec![result(0.2, vec![0.0])]];
        let rep = summarize_avg_recs(&[0.0], &results, &names, 0.5).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(rep.rows[0].stratum, Stratum::Negative);
        assert_eq!(rep.rows[0].mean_delta, 0.0);
        let csv = rep.to_csv().unwrap();
        assert_eq!(csv, "budget,feature,stratum,mean_delta,n\n0,lr,negative,0,2\n");
    }

    #[test]
    fn avg_recs_errors() {
        assert!(matches!(summarize_avg_recs(&[0.1], &[], &[], 0.5), Err(Error::EmptyDataset)));
        let names = vec!["lr".to_string()];
        let results = vec![vec![result(0.1, vec![0.0])]];
        assert!(matches!(
            summarize_avg_recs(&[0.1, 0.2], &results, &names, 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std([1.0, 3.0].into_iter());
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn sweep_csv_header() {
        let rep = SweepReport {
            n_instances: 1,
            mean_prob_before: 0.5,
            mean_prob_baseline: 0.5,
            rows: vec![BudgetRow {
                budget: 0.1,
                mean_prob: 0.4,
                std_prob: 0.0,
                mean_rel_improvement: 0.2,
                std_rel_improvement: 0.0,
            }],
        };
        assert_eq!(
            rep.to_csv().unwrap(),
            "budget,mean_prob,std_prob,mean_rel_improvement,std_rel_improvement\n0.1,0.4,0,0.2,0\n"
        );
    }
}

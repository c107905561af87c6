use fluidrec::bundle::{BundleMetadata, ModelBundle, RawPatient, RawRecommendRequest, RawSweepRequest};
use fluidrec::experiment::{avg_recs_for, run_budget_sweep, run_robustness, train_pipeline, TrainConfig};
use fluidrec::ife::IfeConfig;
use fluidrec::invclass::OptimizeConfig;
use fluidrec::models::ClassifierConfig;
use fluidrec::synth::{generate_synthetic, SyntheticSpec};
use fluidrec::Error;
use std::sync::OnceLock;

fn small_config() -> TrainConfig {
    TrainConfig {
        classifier_grid: vec![ClassifierConfig::logistic(150), ClassifierConfig::feed_forward(3, 150)],
        ife_grid: vec![IfeConfig::linear(150)],
        ..TrainConfig::with_seed(4)
    }
}

fn trained() -> &'static fluidrec::experiment::TrainOutcome {
    static OUT: OnceLock<fluidrec::experiment::TrainOutcome> = OnceLock::new();
    OUT.get_or_init(|| {
        let ds = generate_synthetic(&SyntheticSpec::table1(), 800, 4).unwrap();
        train_pipeline(&ds, &small_config()).unwrap()
    })
}

#[test]
fn pipeline_outputs_are_consistent() {
    let out = trained();
    assert_eq!(out.classifier_table.len(), 2);
    assert_eq!(out.ife_table.len(), 1);
    assert_eq!(out.train.len() + out.validation.len() + out.test.len(), 800);
    assert!(out.test.records.iter().flat_map(|r| &r.x).all(|v| (0.0..=1.0).contains(v)));
    assert!(out.test_metrics.auc > 0.7);
}

#[test]
fn sweep_is_monotone_and_zero_budget_is_identity() {
    let out = trained();
    let budgets = [0.0, 0.1, 0.2, 0.5, 1.0];
    let run = run_budget_sweep(&out.classifier, &out.ife, &out.test, &budgets, &OptimizeConfig::default()).unwrap();
    for inst in &run.results {
        assert!(inst[0].delta.iter().all(|&z| z == 0.0));
        for w in inst.windows(2) {
            assert!(w[1].prob_after <= w[0].prob_after + 1e-6);
        }
    }
    let r0 = &run.report.rows[0];
    assert_eq!(r0.mean_prob, run.report.mean_prob_baseline);
    assert_eq!(r0.mean_rel_improvement, 0.0);
    let avg = avg_recs_for(
        &run,
        &out.test
            .partition
            .d_indices
            .iter()
            .map(|&j| out.test.meta[j].name.clone())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let n_d = out.test.partition.d_indices.len();
    for &b in &budgets {
        let total: usize = avg.rows.iter().filter(|r| r.budget == b).map(|r| r.n).sum();
        assert_eq!(total, out.test.len() * n_d);
    }
    assert!(avg.rows.iter().filter(|r| r.budget == 0.0).all(|r| r.mean_delta == 0.0));
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let out = trained();
    let budgets = [0.3, 0.6];
    let cfg = OptimizeConfig::default();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| run_budget_sweep(&out.classifier, &out.ife, &out.test, &budgets, &cfg).unwrap());
    let b = four.install(|| run_budget_sweep(&out.classifier, &out.ife, &out.test, &budgets, &cfg).unwrap());
    assert_eq!(a.report.to_csv().unwrap(), b.report.to_csv().unwrap());
    assert_eq!(a.results, b.results);
}

#[test]
fn robustness_is_deterministic() {
    let out = trained();
    let budgets = [0.1, 0.5];
    let cfg = OptimizeConfig::default();
    let a = run_robustness(&out.classifier, &out.ife, &out.test, &budgets, &cfg, (0.0, 0.1), 3).unwrap();
    let b = run_robustness(&out.classifier, &out.ife, &out.test, &budgets, &cfg, (0.0, 0.1), 3).unwrap();
    assert_eq!(a, b);
    let c = run_robustness(&out.classifier, &out.ife, &out.test, &budgets, &cfg, (0.05, 0.05), 3).unwrap();
    let d = run_robustness(&out.classifier, &out.ife, &out.test, &budgets, &cfg, (0.05, 0.05), 99).unwrap();
    assert_eq!(c.random, d.random);
    assert_eq!(a.hitl, c.hitl);
    assert!(run_robustness(&out.classifier, &out.ife, &out.test, &budgets, &cfg, (0.2, 0.1), 3).is_err());
}

#[test]
fn bundle_round_trip_and_raw_adapters() {
    let out = trained();
    let bundle = ModelBundle::from_training(out, BundleMetadata::default()).unwrap();
    let json = bundle.to_json().unwrap();
    let back = ModelBundle::from_json(&json).unwrap();
    assert_eq!(back, bundle);

    let part = &bundle.partition;
    let raw = bundle.scaler.inverse_row(&out.test.records[0].x);
    let patient = RawPatient {
        x_u: part.u_indices.iter().map(|&j| raw[j]).collect(),
        x_i_observed: part.i_indices.iter().map(|&j| raw[j]).collect(),
        x_d_physician: part.d_indices.iter().map(|&j| raw[j]).collect(),
    };
    let cfg = OptimizeConfig::default();
    let r0 = bundle
        .recommend_raw(
            &RawRecommendRequest {
                patient: patient.clone(),
                budget: 0.0,
            },
            &cfg,
        )
        .unwrap();
    assert!(r0.delta_raw.iter().all(|&z| z == 0.0));
    let r = bundle
        .recommend_raw(
            &RawRecommendRequest {
                patient: patient.clone(),
                budget: 0.5,
            },
            &cfg,
        )
        .unwrap();
    assert!(r.prob_after <= r.prob_baseline);
    for (k, &j) in part.d_indices.iter().enumerate() {
        let b = bundle.scaler.bound(j);
        assert!(r.x_d_optimized_raw[k] >= b.min - 1e-9 && r.x_d_optimized_raw[k] <= b.max + 1e-9);
    }

    let sweep = bundle
        .sweep_raw(
            &RawSweepRequest {
                budgets: vec![0.0, 0.1, 0.5, 1.0],
                request: patient.clone(),
            },
            &cfg,
        )
        .unwrap();
    assert_eq!(sweep.points[0].prob_after, sweep.prob_baseline);
    for w in sweep.points.windows(2) {
        assert!(w[1].prob_after <= w[0].prob_after + 1e-6);
    }
    assert!(matches!(
        bundle.sweep_raw(
            &RawSweepRequest {
                budgets: vec![],
                request: patient.clone()
            },
            &cfg
        ),
        Err(Error::EmptyBudgets)
    ));
    let mut bad = patient;
    bad.x_d_physician[0] = -5.0;
    assert!(matches!(
        bundle.recommend_raw(&RawRecommendRequest { patient: bad, budget: 0.1 }, &cfg),
        Err(Error::OutOfUnitRange { .. })
    ));
}

#[test]
fn inconsistent_bundles_are_rejected() {
    let out = trained();
    let bundle = ModelBundle::from_training(out, BundleMetadata::default()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&bundle.to_json().unwrap()).unwrap();
    v["ife"]["feature_names"][0] = serde_json::json!("renamed");
    let err = ModelBundle::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("ife.feature_names"), "{err}");
}

#[test]
fn model_json_preserves_predictions() {
    let out = trained();
    let f = fluidrec::models::ClassifierModel::from_json(&out.classifier.to_json().unwrap()).unwrap();
    let h = fluidrec::ife::IfeModel::from_json(&out.ife.to_json().unwrap()).unwrap();
    for r in &out.test.records {
        assert_eq!(f.predict_proba(&r.x).unwrap(), out.classifier.predict_proba(&r.x).unwrap());
        assert_eq!(h.predict_row(&r.x).unwrap(), out.ife.predict_row(&r.x).unwrap());
    }
}

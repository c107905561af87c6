//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::oracle::{finite_difference, max_abs_diff, project_dykstra};
use common::{kink_distance, random_models, uniform_vec};
use fluidrec::bundle::ModelBundle;
use fluidrec::dataset::{apply_scaler, fit_scaler, stratified_split, Category, Dataset, FeatureMeta, PatientRecord, SplitRatios};
use fluidrec::experiment::{requests_from, run_budget_sweep, run_robustness};
use fluidrec::featsel::{classifier_subset_eval, CseConfig};
use fluidrec::ife::IfeModel;
use fluidrec::invclass::{objective, objective_gradient, optimize_recommendation, project_feasible, OptimizeConfig};
use fluidrec::metrics::auc;
use fluidrec::models::{predict_rows, train_classifier, ClassifierConfig, ClassifierModel};
use fluidrec::synth::{generate_synthetic, planted_dataset, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn demo_bundle() -> ModelBundle {
    ModelBundle::from_json(&fs::read_to_string(fixture("demo_bundle.json")).unwrap()).unwrap()
}

/// The 300-row fixture cohort, prepared with the demo bundle's scaler.
fn demo_test_set(bundle: &ModelBundle) -> Dataset {
    let meta: Vec<FeatureMeta> = serde_json::from_str(&fs::read_to_string(fixture("cohort300.meta.json")).unwrap()).unwrap();
    let raw = fluidrec::dataset::load_csv(fixture("cohort300.csv"), &meta).unwrap();
    bundle.prepare(&raw).unwrap()
}

fn budgets() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

fn projection_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=4);
        let x_d: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let b = rng.gen_range(0.0..1.5);
        let got = project_feasible(&v, &x_d, b).unwrap();
        worst = worst.max(max_abs_diff(&got, &project_dykstra(&v, &x_d, b)));
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-4 && t < Duration::from_secs(30),
        format!("200 instances, max err {worst:.2e}, {t:.2?}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut checked, mut seed, mut worst) = (0, 1000u64, 0.0f64);
    while checked < 100 {
        seed += 1;
        let (f, h) = random_models(seed, 2, 3, 4, [0, 3, 6][seed as usize % 3], [0, 4][seed as usize % 2]);
        let x_u = uniform_vec(&mut rng, 2);
        let x_d = uniform_vec(&mut rng, 4);
        if kink_distance(&f, &h, &x_u, &x_d) < 1e-3 {
            continue;
        }
        let g = objective_gradient(&f, &h, &x_u, &x_d).unwrap();
        let fd = finite_difference(|d| objective(&f, &h, &x_u, d).unwrap(), &x_d, 1e-6);
        let scale = fd.iter().map(|v| v.abs()).fold(1e-8, f64::max);
        worst = worst.max(max_abs_diff(&g, &fd) / scale);
        checked += 1;
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-4 && t < Duration::from_secs(10),
        format!("100 triples, max rel err {worst:.2e}, {t:.2?}"),
    )
}

fn budget_zero(f: &ClassifierModel, h: &IfeModel, test: &Dataset) -> Outcome {
    let mut bad = 0;
    for mut req in requests_from(test) {
        req.budget = 0.0;
        let r = optimize_recommendation(f, h, &req, &OptimizeConfig::default()).unwrap();
        let at_physician = objective(f, h, &req.x_u, &req.x_d_physician).unwrap();
        if r.delta.iter().any(|&z| z != 0.0) || r.x_d_optimized != req.x_d_physician || r.prob_after != at_physician {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{} instances, {bad} mismatches", test.len()))
}

fn monotonicity_and_improvement(f: &ClassifierModel, h: &IfeModel, test: &Dataset) -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut bs = vec![0.0];
    bs.extend(budgets());
    let run = run_budget_sweep(f, h, test, &bs, &OptimizeConfig::default()).unwrap();
    let t = start.elapsed();
    let mut violations = 0;
    for per in &run.results {
        for w in per.windows(2) {
            if w[1].prob_after > w[0].prob_after + 1e-6 {
                violations += 1;
            }
        }
    }
    let mu: Vec<f64> = run.report.rows.iter().map(|r| r.mean_prob).collect();
    let strict = mu.windows(2).all(|w| w[1] < w[0]);
    let mono = outcome(
        test.len() == 300 && violations == 0 && strict && t < Duration::from_secs(300),
        format!(
            "{} instances, {violations} violations, mu {:.4} -> {:.4} strictly decreasing: {strict}, {t:.2?}",
            test.len(),
            mu[0],
            mu[mu.len() - 1]
        ),
    );
    let rel = run.report.rows.last().unwrap().mean_rel_improvement;
    (
        mono,
        outcome(rel > 0.05, format!("mean relative improvement at b=1: {:.1}%", rel * 100.0)),
    )
}

fn hitl_robustness(f: &ClassifierModel, h: &IfeModel, test: &Dataset) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=3u64 {
        let rep = run_robustness(f, h, test, &[0.1, 1.0], &OptimizeConfig::default(), (0.0, 0.1), seed).unwrap();
        let gaps = rep.gaps();
        let (g_lo, g_hi) = (gaps[0].1, gaps[1].1);
        let ok = rep.hitl.rows[0].mean_prob <= rep.random.rows[0].mean_prob && g_hi <= g_lo;
        wins += usize::from(ok);
        parts.push(format!("seed {seed}: gap {g_lo:.4} -> {g_hi:.4}"));
    }
    outcome(wins >= 2, format!("{wins}/3 seeds; {}", parts.join("; ")))
}

fn cse_planted() -> Outcome {
    let start = Instant::now();
    let (informative, noise, patience) = (5, 15, 10);
    let mut good = 0;
    let mut bound_ok = true;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let ds = planted_dataset(2000, informative, noise, 3.0, seed).unwrap();
        let cfg = CseConfig {
            patience,
            seed,
            ..CseConfig::default()
        };
        let out = classifier_subset_eval(&ds, &cfg).unwrap();
        bound_ok &= out.trace.steps.len() <= (informative + noise) * (patience + 1);
        let inf = out.selected_indices.iter().filter(|&&j| j < informative).count();
        let noi = out.selected_indices.len() - inf;
        good += usize::from(inf >= 4 && noi <= 3);
        parts.push(format!("{inf}+{noi}"));
    }
    outcome(
        good >= 3 && bound_ok,
        format!(
            "{good}/5 seeds recover (informative+noise: {}), iteration bound holds: {bound_ok}, {:.2?}",
            parts.join(", "),
            start.elapsed()
        ),
    )
}

fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let meta = vec![
        FeatureMeta::new("a", Category::Direct, "", 0.0, 1.0),
        FeatureMeta::new("b", Category::Direct, "", 0.0, 1.0),
    ];
    let mut records = Vec::new();
    while records.len() < n {
        let x: Vec<f64> = vec![rng.gen(), rng.gen()];
        let margin = x[0] + x[1] - 1.0;
        if margin.abs() >= 0.05 {
            records.push(PatientRecord {
                x,
                y: u8::from(margin > 0.0),
            });
        }
    }
    Dataset::new(records, meta).unwrap()
}

fn classifier_sanity() -> Outcome {
    let cfg = ClassifierConfig::feed_forward(3, 250);
    let sep = separable(600, 3);
    let m = train_classifier(&sep, &cfg).unwrap();
    let sep_auc = auc(&predict_rows(&m, &sep.rows()).unwrap(), &sep.labels()).unwrap();

    let raw = generate_synthetic(&SyntheticSpec::table1(), 5000, 7).unwrap();
    let (train, val, _) = stratified_split(&raw, SplitRatios::default(), 7).unwrap();
    let scaler = fit_scaler(&train).unwrap();
    let (train, val) = (apply_scaler(&train, &scaler).unwrap(), apply_scaler(&val, &scaler).unwrap());
    let m = train_classifier(&train, &cfg).unwrap();
    let val_auc = auc(&predict_rows(&m, &val.rows()).unwrap(), &val.labels()).unwrap();

    let labels = val.labels();
    let const_auc = auc(&vec![0.3; labels.len()], &labels).unwrap();
    outcome(
        sep_auc >= 0.95 && val_auc >= 0.90 && const_auc == 0.5,
        format!("separable AUC {sep_auc:.4}, default cohort validation AUC {val_auc:.4}, constant AUC {const_auc}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fluidrec"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bundle = fixture("demo_bundle.json");
    let cohort = fixture("cohort300.csv");
    let request = fixture("request.json");
    let cse_cfg = root.join("cse.json");
    fs::write(
        &cse_cfg,
        r#"{"patience": 3, "inner_classifier": {"variant": "feed_forward", "hidden_nodes": 3, "epochs": 100, "learning_rate": 0.01, "seed": 0}}"#,
    )
    .unwrap();
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let commands: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--n".into(), "200".into(), "--seed".into(), "4".into()]),
        ("train", vec!["train".into(), "--data".into(), p(&cohort), "--seed".into(), "4".into()]),
        (
            "select-features",
            vec![
                "select-features".into(),
                "--data".into(),
                p(&cohort),
                "--config".into(),
                p(&cse_cfg),
                "--seed".into(),
                "4".into(),
            ],
        ),
        (
            "recommend",
            vec!["recommend".into(), "--bundle".into(), p(&bundle), "--request".into(), p(&request)],
        ),
        (
            "sweep",
            vec![
                "sweep".into(),
                "--bundle".into(),
                p(&bundle),
                "--data".into(),
                p(&cohort),
                "--seed".into(),
                "4".into(),
            ],
        ),
        (
            "robustness",
            vec![
                "robustness".into(),
                "--bundle".into(),
                p(&bundle),
                "--data".into(),
                p(&cohort),
                "--budgets".into(),
                "0.1,0.5,1".into(),
                "--seed".into(),
                "4".into(),
            ],
        ),
    ];
    let mut failed = Vec::new();
    for (name, args) in &commands {
        let mut outputs = Vec::new();
        for (run, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
            let out = root.join(format!("{name}-{run}"));
            let mut full: Vec<String> = args.clone();
            full.extend(["--out".into(), p(&out), "--threads".into(), threads.into()]);
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            if !run_cli(&refs) {
                failed.push(format!("{name} (exit)"));
                break;
            }
            outputs.push(dir_bytes(&out));
        }
        if outputs.len() == 3 && !(outputs[0] == outputs[1] && outputs[1] == outputs[2]) {
            failed.push(name.to_string());
        }
    }
    outcome(
        failed.is_empty(),
        format!(
            "{} subcommands, 2 runs at 1 thread + 1 at 4 threads; differing: {failed:?}",
            commands.len()
        ),
    )
}

fn serialization_roundtrip(bundle: &ModelBundle, test: &Dataset) -> Outcome {
    let rows = test.rows();
    let f2 = ClassifierModel::from_json(&bundle.classifier.to_json().unwrap()).unwrap();
    let h2 = IfeModel::from_json(&bundle.ife.to_json().unwrap()).unwrap();
    let b2 = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    let p1 = predict_rows(&bundle.classifier, &rows).unwrap();
    for m in [&f2, &b2.classifier] {
        worst = worst.max(max_abs_diff(&p1, &predict_rows(m, &rows).unwrap()));
    }
    for x in &rows {
        let a = bundle.ife.predict_row(x).unwrap();
        for m in [&h2, &b2.ife] {
            worst = worst.max(max_abs_diff(&a, &m.predict_row(x).unwrap()));
        }
    }
    outcome(
        worst <= 1e-15,
        format!("classifier, IFE and bundle over {} rows, max diff {worst:e}", rows.len()),
    )
}

fn main() {
    let bundle = demo_bundle();
    let test = demo_test_set(&bundle);
    let (f, h) = (&bundle.classifier, &bundle.ife);

    let mut results: Vec<(&str, Outcome)> = vec![
        ("projection matches oracle", projection_oracle()),
        ("gradient matches finite differences", gradient_check()),
        ("budget zero is the identity", budget_zero(f, h, &test)),
    ];
    let (mono, rel) = monotonicity_and_improvement(f, h, &test);
    results.push(("budget monotonicity", mono));
    results.push(("relative improvement above 5%", rel));
    results.push(("HITL robustness shape", hitl_robustness(f, h, &test)));
    results.push(("feature selection on planted data", cse_planted()));
    results.push(("classifier sanity", classifier_sanity()));
    results.push(("CLI determinism", cli_determinism()));
    results.push(("serialization round-trip", serialization_roundtrip(&bundle, &test)));

    let mut all = true;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        all &= o.pass;
    }
    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !all {
        std::process::exit(1);
    }
}

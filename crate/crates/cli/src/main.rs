use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fluidrec::bundle::{BundleMetadata, ModelBundle, RawRecommendRequest};
use fluidrec::dataset::{apply_scaler, fit_scaler, impute_mean, load_csv, Dataset, FeatureMeta};
use fluidrec::experiment::{
    avg_recs_for, classifier_table_csv, default_budgets, ife_table_csv, run_budget_sweep, run_robustness, train_pipeline, TrainConfig,
};
use fluidrec::featsel::{classifier_subset_eval, CseConfig};
use fluidrec::invclass::OptimizeConfig;
use fluidrec::synth::{generate_synthetic, SyntheticSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fluidrec", version, about = "IV fluid recommendations by inverse classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random choice (overrides the seed in --config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (for `synth`, a CSV path is also accepted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated budgets, e.g. `0,0.1,0.5`.
    #[arg(long, global = true, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
    /// Progress messages on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV and its feature metadata.
    Synth {
        /// Cohort summary JSON (defaults to the built-in table).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        n: usize,
    },
    /// Grid-search the classifier and IFE and write a model bundle.
    Train(DataArgs),
    /// Run classifier subset evaluation feature selection.
    SelectFeatures(DataArgs),
    /// Recommend fluids for one patient given in clinical units.
    Recommend {
        #[arg(long)]
        bundle: PathBuf,
        /// JSON with x_u, x_i_observed, x_d_physician and budget.
        #[arg(long)]
        request: PathBuf,
        /// Overrides the budget in the request.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Optimize every record of a dataset at each budget.
    Sweep {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compare recorded and random starting prescriptions.
    Robustness {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.0)]
        init_low: f64,
        #[arg(long, default_value_t = 0.1)]
        init_high: f64,
    },
    /// Serve bundles over HTTP.
    Serve {
        #[arg(long, env = "FLUIDREC_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "FLUIDREC_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "FLUIDREC_BUNDLE_DIR")]
        bundle_dir: Option<PathBuf>,
        /// Bundles to register at startup.
        #[arg(long)]
        bundle: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Cohort CSV in clinical units.
    #[arg(long)]
    data: PathBuf,
    /// Feature metadata JSON (default: `<data stem>.meta.json`).
    #[arg(long)]
    meta: Option<PathBuf>,
}

/// Failures in reading or processing data (exit code 1).
struct Ctx<'a> {
    g: &'a Global,
}

impl Ctx<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if self.g.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.g.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn config<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.g.config {
            Some(p) => read_json(p),
            None => Ok(T::default()),
        }
    }

    fn budgets(&self) -> Vec<f64> {
        self.g.budgets.clone().unwrap_or_else(default_budgets)
    }

    fn write(&self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.log(format!("wrote {}", path.display()));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, dir: &Path, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(dir, name, &s)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn meta_path_for(data: &Path) -> PathBuf {
    let stem = data.file_stem().unwrap_or_default().to_string_lossy();
    data.with_file_name(format!("{stem}.meta.json"))
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let meta_path = args.meta.clone().unwrap_or_else(|| meta_path_for(&args.data));
    let meta: Vec<FeatureMeta> = read_json(&meta_path)?;
    load_csv(&args.data, &meta).with_context(|| format!("loading {}", args.data.display()))
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ModelBundle::from_json(&text).with_context(|| format!("loading bundle {}", path.display()))
}

fn optimize_config(ctx: &Ctx) -> Result<OptimizeConfig> {
    let mut cfg: OptimizeConfig = ctx.config()?;
    if let Some(s) = ctx.g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth(ctx: &Ctx, spec: Option<&Path>, n: usize) -> Result<()> {
    let spec = match spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::table1(),
    };
    let seed = ctx.g.seed.unwrap_or(0);
    let ds = generate_synthetic(&spec, n, seed)?;
    let csv_path = match &ctx.g.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            p.clone()
        }
        _ => ctx.out_dir()?.join("cohort.csv"),
    };
    ds.save_csv(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    ctx.log(format!("wrote {} ({} rows)", csv_path.display(), ds.len()));
    let meta_path = meta_path_for(&csv_path);
    let mut s = serde_json::to_string_pretty(&ds.meta)?;
    s.push('\n');
    fs::write(&meta_path, s).with_context(|| format!("writing {}", meta_path.display()))?;
    ctx.log(format!("wrote {}", meta_path.display()));
    Ok(())
}

fn train(ctx: &Ctx, data: &DataArgs) -> Result<()> {
    let raw = load_data(data)?;
    let cfg: TrainConfig = match (&ctx.g.config, ctx.g.seed) {
        (None, seed) => TrainConfig::with_seed(seed.unwrap_or(0)),
        (Some(_), seed) => {
            let mut c: TrainConfig = ctx.config()?;
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
    };
    ctx.log(format!(
        "training {} classifier and {} IFE configurations on {} rows",
        cfg.classifier_grid.len(),
        cfg.ife_grid.len(),
        raw.len()
    ));
    let out = train_pipeline(&raw, &cfg)?;
    let metrics = serde_json::json!({
        "classifier": out.classifier_table[out.classifier_best],
        "ife": out.ife_table[out.ife_best],
        "test": out.test_metrics,
        "test_ife": out.test_ife_metrics,
    });
    let metadata = BundleMetadata {
        training_config: Some(serde_json::to_value(&cfg)?),
        metrics: Some(metrics.clone()),
        ..BundleMetadata::default()
    };
    let bundle = ModelBundle::from_training(&out, metadata)?;
    let dir = ctx.out_dir()?;
    ctx.write(&dir, "bundle.json", &(bundle.to_json()? + "\n"))?;
    ctx.write(&dir, "classifier.json", &(out.classifier.to_json()? + "\n"))?;
    ctx.write(&dir, "ife.json", &(out.ife.to_json()? + "\n"))?;
    ctx.write(&dir, "scaler.json", &(out.scaler.to_json()? + "\n"))?;
    ctx.write(&dir, "classifier_grid.csv", &classifier_table_csv(&out.classifier_table)?)?;
    ctx.write(&dir, "ife_grid.csv", &ife_table_csv(&out.ife_table)?)?;
    ctx.write_json(
        &dir,
        "train_report.json",
        &serde_json::json!({
            "config": cfg,
            "classifier_grid": out.classifier_table,
            "ife_grid": out.ife_table,
            "selected": metrics,
        }),
    )?;
    // held-out split in clinical units, for sweep and robustness runs
    let mut test_raw = out.test.clone();
    for r in &mut test_raw.records {
        r.x = out.scaler.inverse_row(&r.x);
    }
    test_raw.save_csv(dir.join("test.csv"))?;
    ctx.write_json(&dir, "test.meta.json", &test_raw.meta)?;
    println!(
        "test AUC {:.4}, accuracy {:.4}; IFE test MSE {:.5}",
        out.test_metrics.auc, out.test_metrics.accuracy, out.test_ife_metrics.mse
    );
    Ok(())
}

fn select_features(ctx: &Ctx, data: &DataArgs) -> Result<()> {
    let raw = load_data(data)?;
    let ds = impute_mean(&raw)?;
    let ds = apply_scaler(&ds, &fit_scaler(&ds)?)?;
    let mut cfg: CseConfig = ctx.config()?;
    if let Some(s) = ctx.g.seed {
        cfg.seed = s;
    }
    let out = classifier_subset_eval(&ds, &cfg)?;
    let dir = ctx.out_dir()?;
    ctx.write(&dir, "cse_trace.jsonl", &out.trace.to_json_lines()?)?;
    ctx.write_json(&dir, "selected_features.json", &out.selected)?;
    println!(
        "selected {} of {} features in {} iterations",
        out.selected.len(),
        ds.n_features(),
        out.trace.steps.len()
    );
    Ok(())
}

fn recommend(ctx: &Ctx, bundle: &Path, request: &Path, budget: Option<f64>) -> Result<()> {
    let b = load_bundle(bundle)?;
    let mut req: RawRecommendRequest = read_json(request)?;
    if let Some(bud) = budget {
        req.budget = bud;
    }
    let mut res = b.recommend_raw(&req, &optimize_config(ctx)?)?;
    if !ctx.g.verbose {
        res.normalized.trajectory.clear();
    }
    let text = serde_json::to_string_pretty(&res)? + "\n";
    if ctx.g.out.is_some() {
        ctx.write(&ctx.out_dir()?, "recommendation.json", &text)?;
    }
    print!("{text}");
    Ok(())
}

fn sweep(ctx: &Ctx, bundle: &Path, data: &DataArgs) -> Result<()> {
    let b = load_bundle(bundle)?;
    let test = b.prepare(&load_data(data)?)?;
    let budgets = ctx.budgets();
    ctx.log(format!("optimizing {} records at {} budgets", test.len(), budgets.len()));
    let run = run_budget_sweep(&b.classifier, &b.ife, &test, &budgets, &optimize_config(ctx)?)?;
    let d_names: Vec<String> = b.partition.d_indices.iter().map(|&j| b.meta[j].name.clone()).collect();
    let avg = avg_recs_for(&run, &d_names)?;
    let dir = ctx.out_dir()?;
    ctx.write(&dir, "sweep.csv", &run.report.to_csv()?)?;
    ctx.write_json(&dir, "sweep.json", &run.report)?;
    ctx.write(&dir, "avg_recs.csv", &avg.to_csv()?)?;
    ctx.write_json(&dir, "avg_recs.json", &avg)?;
    for r in &run.report.rows {
        println!(
            "b={:<4} mean_prob={:.4} rel_improvement={:.4}",
            r.budget, r.mean_prob, r.mean_rel_improvement
        );
    }
    Ok(())
}

fn robustness(ctx: &Ctx, bundle: &Path, data: &DataArgs, lo: f64, hi: f64) -> Result<()> {
    let b = load_bundle(bundle)?;
    let test = b.prepare(&load_data(data)?)?;
    let budgets = ctx.budgets();
    let cfg = optimize_config(ctx)?;
    let rep = run_robustness(&b.classifier, &b.ife, &test, &budgets, &cfg, (lo, hi), ctx.g.seed.unwrap_or(0))?;
    let dir = ctx.out_dir()?;
    ctx.write(&dir, "robustness.csv", &rep.to_csv()?)?;
    ctx.write_json(&dir, "robustness.json", &rep)?;
    for (budget, gap) in rep.gaps() {
        println!("b={budget:<4} random-hitl gap={gap:.4}");
    }
    Ok(())
}

fn serve(host: &str, port: u16, dir: Option<&Path>, bundles: &[PathBuf]) -> Result<()> {
    let registry = match dir {
        Some(d) => fluidrec_service::Registry::persistent(d)?,
        None => fluidrec_service::Registry::in_memory(),
    };
    for p in bundles {
        let id = registry.insert(load_bundle(p)?)?;
        eprintln!("registered {} as {id}", p.display());
    }
    let state = fluidrec_service::AppState::new(registry);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(fluidrec_service::serve(host, port, state))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx { g: &cli.global };
    match &cli.command {
        Command::Synth { spec, n } => synth(&ctx, spec.as_deref(), *n),
        Command::Train(d) => train(&ctx, d),
        Command::SelectFeatures(d) => select_features(&ctx, d),
        Command::Recommend { bundle, request, budget } => recommend(&ctx, bundle, request, *budget),
        Command::Sweep { bundle, data } => sweep(&ctx, bundle, data),
        Command::Robustness {
            bundle,
            data,
            init_low,
            init_high,
        } => robustness(&ctx, bundle, data, *init_low, *init_high),
        Command::Serve {
            host,
            port,
            bundle_dir,
            bundle,
        } => serve(host, *port, bundle_dir.as_deref(), bundle),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

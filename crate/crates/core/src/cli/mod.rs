//! `ccgen` command-line interface.

pub mod config;
pub mod selfcheck;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_pointwise, evaluate_predictor, curves_csv, ContextMean, CurveOracle, CurvePredictor, Evaluation,
    KnnBaseline, Observations, OptimumMode, OraclePredictor,
};
use crate::model::{checkpoint, train::loss_log_csv, Trainer};
use crate::prior::{sample_dataset, DgpSpec};
use crate::rng::child_seed;
use crate::scenario::{
    builtin_scenario, read_benchmark_csv, realize_scenario, realize_with_covariates, write_benchmark_csv,
    load_covariate_file, BenchmarkTable, Realization,
};
pub use config::RunConfig;
use selfcheck::{run_checks, SelfcheckOptions};

#[derive(Parser, Debug)]
#[command(name = "ccgen", version, about = "Continuous-treatment causal data generator and curve estimator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample prior datasets and write benchmark CSVs plus DGP specs.
    Gen(GenArgs),
    /// Realize a builtin scenario to a benchmark CSV.
    Scenario(ScenarioArgs),
    /// Train the in-context model on freshly sampled prior datasets.
    Train(TrainArgs),
    /// Cross-validated MISE/DPE of a checkpoint or baseline.
    Eval(EvalArgs),
    /// Run the fast invariant suite.
    Selfcheck(SelfcheckArgs),
}

/// Flags shared by every command; each one overrides the matching config key.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long)]
    pub corruption: Option<String>,
    #[arg(long)]
    pub positivity: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
}

impl CommonArgs {
    pub fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("seed", &self.seed),
            ("prior", &self.prior),
            ("corruption_mode", &self.corruption),
            ("positivity", &self.positivity),
            ("loss", &self.loss),
            ("optimizer", &self.optimizer),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for (key, value) in extra {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long = "n-samples")]
    pub n_samples: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    /// Builtin scenario id (vshape, monotone_saturating).
    pub id: String,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Covariate CSV replacing the builtin covariates.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Output CSV; a `.meta.json` file is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub steps: Option<String>,
    /// Output directory for `model.ckpt` and `loss_log.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "predictor")]
    pub checkpoint: Option<PathBuf>,
    /// Baseline id: oracle, context_mean or knn.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Benchmark CSV; without it a dataset is sampled from the prior.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// DGP spec that produced `--data`, used as the curve oracle.
    #[arg(long, requires = "data", conflicts_with = "scenario")]
    pub dgp: Option<PathBuf>,
    /// Builtin scenario that produced `--data`, used as the curve oracle.
    #[arg(long, requires = "data")]
    pub scenario: Option<String>,
    #[arg(long = "n-samples")]
    pub n_samples: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long = "grid-points")]
    pub grid_points: Option<String>,
    /// min, max or monotone; defaults to the data source's convention.
    #[arg(long)]
    pub optimum: Option<String>,
    /// Output directory for `report.txt`, `folds.csv` and `curves.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    #[arg(long, hide = true)]
    pub reverse_grid: bool,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Rayon pool capped by `CCGEN_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CCGEN_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("CCGEN_THREADS must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.common.resolve(&[("count", args.count.clone()), ("n_samples", args.n_samples.clone())])?;
    let prior = cfg.prior_config();
    create_dir(&args.out)?;
    let pool = thread_pool()?;
    let results: Vec<Result<String>> = pool.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let seed = child_seed(cfg.seed, "gen", i as u64);
                let (dgp, data, stats) = sample_dataset(&prior, seed)?;
                let table = BenchmarkTable::from_dataset(&data);
                write_benchmark_csv(&table, args.out.join(format!("dataset_{i}.csv")))?;
                let hp = dgp.hyperparams();
                let line = format!(
                    "dataset_{i} prior={} N={} K={} rho={:.4} retries={}",
                    prior.prior,
                    data.n_rows(),
                    data.n_covariates(),
                    hp.confounding,
                    stats.retries
                );
                DgpSpec::new(&prior, seed, stats, dgp).save(args.out.join(format!("dataset_{i}.dgp.json")))?;
                Ok(line)
            })
            .collect()
    });
    for r in results {
        let _ = writeln!(out, "{}", r?);
    }
    Ok(())
}

pub fn cmd_scenario(args: &ScenarioArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.common.resolve(&[])?;
    let scenario = builtin_scenario(&args.id)?;
    let (realization, dropped) = match &args.covariates {
        Some(path) => {
            let table = load_covariate_file(path)?;
            (realize_with_covariates(&scenario, table.values, cfg.seed)?, table.dropped_rows)
        }
        None => (realize_scenario(&scenario, cfg.seed)?, 0),
    };
    let path = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", scenario.name)));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_benchmark_csv(&realization.table, &path)?;
    let dpe = if scenario.optimum_mode == OptimumMode::Monotone { "skipped" } else { "computed" };
    let meta = serde_json::json!({
        "scenario": scenario.name,
        "seed": cfg.seed,
        "rows": realization.table.n_rows(),
        "covariates": realization.table.n_covariates(),
        "dropped_rows": dropped,
        "optimum_mode": scenario.optimum_mode.to_string(),
        "dpe": dpe,
    });
    let meta_path = PathBuf::from(format!("{}.meta.json", path.display()));
    write_file(&meta_path, &format!("{}\n", serde_json::to_string_pretty(&meta)?))?;
    let _ = writeln!(
        out,
        "{} rows={} K={} optimum={} dpe={} -> {}",
        scenario.name,
        realization.table.n_rows(),
        realization.table.n_covariates(),
        scenario.optimum_mode,
        dpe,
        path.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.common.resolve(&[("steps", args.steps.clone())])?;
    let train_cfg = cfg.train_config();
    create_dir(&args.out)?;
    let mut trainer = Trainer::new(train_cfg)?;
    let steps = trainer.config.steps;
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let rec = trainer.step(step).map_err(|e| {
            log::error!("training failed at step {step}: {e}");
            e
        })?;
        if step % 100 == 0 || step + 1 == steps {
            log::info!("step {step} loss {:.5}", rec.loss);
        }
        log.push(rec);
    }
    let ckpt = args.out.join("model.ckpt");
    checkpoint::save(&trainer.model, &ckpt)?;
    write_file(&args.out.join("loss_log.csv"), &loss_log_csv(&log))?;
    let last = log.last().map_or(f64::NAN, |r| r.loss);
    let _ = writeln!(
        out,
        "trained {steps} steps, {} parameters, final loss {last:.5} -> {}",
        trainer.model.param_count(),
        ckpt.display()
    );
    Ok(())
}

/// Where evaluation ground truth comes from.
enum Truth {
    Curves(Box<dyn CurveOracle>, OptimumMode),
    Points { t_test: Vec<f64>, cepo_test: Vec<f64> },
}

fn refit_scenario(id: &str, table: BenchmarkTable) -> Result<(Realization, OptimumMode)> {
    let scenario = builtin_scenario(id)?;
    let fitted = scenario.fit(&table.covariates);
    Ok((Realization { table, fitted }, scenario.optimum_mode))
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.common.resolve(&[
        ("n_samples", args.n_samples.clone()),
        ("folds", args.folds.clone()),
        ("grid_points", args.grid_points.clone()),
        ("optimum_mode", args.optimum.clone()),
    ])?;
    let (data, truth) = match (&args.data, &args.dgp, &args.scenario) {
        (None, _, _) => {
            let (dgp, dataset, _) = sample_dataset(&cfg.prior_config(), cfg.seed)?;
            (Observations::from_dataset(&dataset), Truth::Curves(Box::new(dgp), OptimumMode::Max))
        }
        (Some(path), dgp, scenario) => {
            let table = read_benchmark_csv(path)?;
            let obs = table.observations();
            if let Some(spec_path) = dgp {
                let spec = DgpSpec::load(spec_path)?;
                (obs, Truth::Curves(Box::new(spec.dgp), OptimumMode::Max))
            } else if let Some(id) = scenario {
                let (realization, mode) = refit_scenario(id, table)?;
                (obs, Truth::Curves(Box::new(realization), mode))
            } else {
                let BenchmarkTable { t_test, cepo_test, .. } = table;
                (obs, Truth::Points { t_test, cepo_test })
            }
        }
    };

    let model;
    let oracle_predictor;
    let predictor: &dyn CurvePredictor = match (&args.checkpoint, args.predictor.as_deref()) {
        (Some(path), _) => {
            model = checkpoint::load(path)?;
            &model
        }
        (None, Some("context_mean")) => &ContextMean,
        (None, Some("knn")) => &KnnBaseline { k: cfg.k_neighbors },
        (None, Some("oracle")) => match &truth {
            Truth::Curves(oracle, _) => {
                oracle_predictor = OraclePredictor { oracle: oracle.as_ref() };
                &oracle_predictor
            }
            Truth::Points { .. } => {
                return Err(Error::InvalidArgument(
                    "the oracle predictor needs --dgp or --scenario, or generated data".into(),
                ))
            }
        },
        (None, Some(other)) => return Err(Error::InvalidArgument(format!("unknown predictor '{other}'"))),
        (None, None) => return Err(Error::InvalidArgument("pass --checkpoint or --predictor".into())),
    };

    let Evaluation { report, curves } = match &truth {
        Truth::Curves(oracle, mode) => {
            evaluate_predictor(predictor, &data, oracle.as_ref(), &cfg.eval_options(*mode, true)?)?
        }
        Truth::Points { t_test, cepo_test } => {
            evaluate_pointwise(predictor, &data, t_test, cepo_test, &cfg.eval_options(OptimumMode::Max, true)?)?
        }
    };
    create_dir(&args.out)?;
    let text = report.to_text();
    write_file(&args.out.join("report.txt"), &text)?;
    write_file(&args.out.join("folds.csv"), &report.to_fold_csv())?;
    write_file(&args.out.join("curves.csv"), &curves_csv(&curves))?;
    let _ = write!(out, "{text}");
    Ok(())
}

/// Returns true when every check passed.
pub fn cmd_selfcheck(args: &SelfcheckArgs, out: &mut dyn Write) -> bool {
    let outcomes = run_checks(&SelfcheckOptions { reverse_grid: args.reverse_grid });
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(()) => {
                let _ = writeln!(out, "PASS {}", o.name);
            }
            Err(msg) => {
                failed += 1;
                let _ = writeln!(out, "FAIL {}: {msg}", o.name);
            }
        }
    }
    let _ = writeln!(out, "{} checks, {failed} failed", outcomes.len());
    failed == 0
}

/// Exit code for a selfcheck with failures.
pub const SELFCHECK_FAILED: i32 = 3;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { write!(out, "{rendered}") } else { write!(err, "{rendered}") };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Scenario(a) => cmd_scenario(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Selfcheck(a) => {
            return if cmd_selfcheck(a, out) { 0 } else { SELFCHECK_FAILED };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

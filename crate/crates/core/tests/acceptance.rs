//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 5`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ccgen::eval::{
    dpe, evaluate_predictor, kfold_split, mise, uniform_grid, ContextMean, EvalOptions, KnnBaseline, Observations,
    OptimumMode,
};
use ccgen::model::gradcheck::{gradient_check, tiny_check_case};
use ccgen::model::train::build_training_batch;
use ccgen::model::{checkpoint, predict_probs, train, LossKind, OptimizerKind, ToyModelConfig, TrainConfig, Trainer};
use ccgen::ppd::{crps_loss, gaussian_bin_mass, histogram_loss, BinGrid, HistogramDistribution};
use ccgen::prior::{sample_dataset, sample_dgp_dataset, sample_outcome, PriorConfig};
use ccgen::rng::stream;
use ccgen::scenario::{read_benchmark_csv, write_benchmark_csv, BenchmarkTable};
use rand::Rng;
use statrs::function::erf::erf;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_ccgen");
    for run in ["a", "b"] {
        let status = Command::new(bin)
            .args(["gen", "--prior", "three_mlp", "--seed", "7", "--count", "2", "--out"])
            .arg(tmp.path().join(run))
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || format!("gen failed: {}", String::from_utf8_lossy(&status.stderr)))?;
    }
    let a = files_in(&tmp.path().join("a"));
    let b = files_in(&tmp.path().join("b"));
    ensure(a.len() == 4, || format!("expected 4 files, found {}", a.len()))?;
    ensure(a == b, || "outputs differ between runs".into())?;
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("2 datasets byte-identical across runs in {:.1?}", start.elapsed()))
}

fn prior_invariants() -> Outcome {
    let start = Instant::now();
    let config = PriorConfig::default();
    for seed in 0..1000u64 {
        let (dgp, data) = sample_dgp_dataset(&config, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let k = data.n_covariates();
        ensure(dgp.split.is_partition_of(k), || format!("seed {seed}: roles do not partition {k} covariates"))?;
        ensure(dgp.treatment_edges_kept(), || format!("seed {seed}: a treatment edge of the outcome MLP was dropped"))?;
        let floor = dgp.treatment_noise_floor();
        ensure(floor > 0.0, || format!("seed {seed}: zero treatment noise floor"))?;
        if let Some((row, sd)) = dgp.treatment_noise_std.iter().enumerate().find(|(_, &s)| !(s >= floor)) {
            return Err(format!("seed {seed}: row {row} treatment noise std {sd} below floor {floor}"));
        }
        let lo = data.t.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(lo == 0.0 && hi == 1.0, || format!("seed {seed}: treatment spans [{lo}, {hi}]"))?;
    }
    within_budget(start, Duration::from_secs(300))?;
    Ok(format!("1000 DGPs in {:.1?}", start.elapsed()))
}

fn cepo_oracle() -> Outcome {
    let start = Instant::now();
    let config = PriorConfig { n_samples: 128, ..PriorConfig::default() };
    let mut rng = stream(3, "acceptance_cepo", 0);
    let mut passed = 0;
    for i in 0..50u64 {
        let (dgp, data, _) = sample_dataset(&config, 10_000 + i).map_err(|e| e.to_string())?;
        let row = rng.random_range(0..data.n_rows());
        let t: f64 = rng.random();
        let target = dgp.query_cepo(row, t).map_err(|e| e.to_string())?;
        let draws: Vec<f64> =
            (0..10_000).map(|_| sample_outcome(&dgp, row, t, &mut rng)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        if (mean - target).abs() <= 4.0 * se {
            passed += 1;
        }
    }
    ensure(passed >= 48, || format!("{passed}/50 triples within 4 standard errors"))?;
    within_budget(start, Duration::from_secs(300))?;
    Ok(format!("{passed}/50 triples within 4 standard errors"))
}

fn random_distribution<R: Rng>(rng: &mut R, bins: usize) -> HistogramDistribution {
    let raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>().powi(3) + 1e-6).collect();
    let s: f64 = raw.iter().sum();
    HistogramDistribution { probs: raw.into_iter().map(|v| v / s).collect() }
}

/// Independent normal CDF through `erf` rather than `erfc`.
fn cdf_via_erf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn loss_kernels() -> Outcome {
    let mut rng = stream(4, "acceptance_loss", 0);
    let mut worst_ce: f64 = 0.0;
    for bins in [8, 1024] {
        for _ in 0..100 {
            let q = random_distribution(&mut rng, bins);
            let target = random_distribution(&mut rng, bins);
            let mut oracle = 0.0;
            for l in 0..bins {
                oracle += -target.probs[l] * q.probs[l].max(1e-12).ln();
            }
            worst_ce = worst_ce.max((histogram_loss(&q, &target) - oracle).abs());
        }
    }
    ensure(worst_ce <= 1e-10, || format!("histogram loss off by {worst_ce:e}"))?;

    let mut worst_sum: f64 = 0.0;
    let mut worst_bin: f64 = 0.0;
    for bins in [8, 64, 1024] {
        let grid = BinGrid::standard(bins);
        for _ in 0..100 {
            let mu = rng.random_range(-11.0..11.0);
            let sigma = 10f64.powf(rng.random_range(-2.0..0.5));
            let q = gaussian_bin_mass(mu, sigma, &grid);
            worst_sum = worst_sum.max((q.probs.iter().sum::<f64>() - 1.0).abs());
            for l in 0..bins {
                let lo = if l == 0 { 0.0 } else { cdf_via_erf((grid.edges[l] - mu) / sigma) };
                let hi = if l + 1 == bins { 1.0 } else { cdf_via_erf((grid.edges[l + 1] - mu) / sigma) };
                worst_bin = worst_bin.max((q.probs[l] - (hi - lo)).abs());
            }
        }
    }
    ensure(worst_sum <= 1e-12, || format!("bin mass sums off by {worst_sum:e}"))?;
    ensure(worst_bin <= 1e-9, || format!("bin mass off by {worst_bin:e}"))?;

    let mut worst_crps: f64 = 0.0;
    for bins in [8, 1024] {
        let grid = BinGrid::standard(bins);
        let w = grid.width();
        let closed: f64 = (1..=bins).map(|k| (k as f64 / bins as f64 - 1.0).powi(2) * w).sum();
        worst_crps = worst_crps.max((crps_loss(&HistogramDistribution::uniform(bins), &grid, grid.lo) - closed).abs());
    }
    ensure(worst_crps <= 1e-10, || format!("uniform CRPS off by {worst_crps:e}"))?;
    Ok(format!("max errors: CE {worst_ce:.1e}, mass sum {worst_sum:.1e}, per bin {worst_bin:.1e}, CRPS {worst_crps:.1e}"))
}

fn metric_oracles() -> Outcome {
    let grid = uniform_grid(65);
    let truth: Vec<Vec<f64>> = (0..4).map(|r| grid.iter().map(|t| (3.0 * t + r as f64).cos()).collect()).collect();
    let delta = 0.37;
    let shifted: Vec<Vec<f64>> = truth.iter().map(|c| c.iter().map(|v| v + delta).collect()).collect();
    let m = mise(&shifted, &truth, &grid).map_err(|e| e.to_string())?;
    ensure((m - delta * delta).abs() <= 1e-12, || format!("constant offset gave {m}"))?;

    let fine = uniform_grid(641);
    let quad = |g: &[f64]| -> Result<f64, String> {
        mise(&[g.to_vec()], &[vec![0.0; g.len()]], g).map_err(|e| e.to_string())
    };
    let (coarse_v, fine_v) = (quad(&grid)?, quad(&fine)?);
    let rel = (coarse_v - fine_v).abs() / fine_v;
    ensure(rel < 1e-3, || format!("trapezoid vs fine grid relative error {rel:e}"))?;

    let mesh = uniform_grid(65);
    let bowl: Vec<Vec<f64>> = vec![mesh.iter().map(|t| -(t - 0.5) * (t - 0.5)).collect()];
    for mode in [OptimumMode::Min, OptimumMode::Max] {
        for c in [-3.0, 0.25, 1e3] {
            let lifted: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
            let d = dpe(&lifted, &truth, &mesh, mode).map_err(|e| e.to_string())?;
            ensure(d == 0.0, || format!("vertical shift {c} gave DPE {d}"))?;
        }
    }
    let at_zero: Vec<Vec<f64>> = vec![mesh.iter().map(|t| -t).collect()];
    let d = dpe(&at_zero, &bowl, &mesh, OptimumMode::Max).map_err(|e| e.to_string())?;
    ensure((d - 0.0625).abs() <= 1e-12, || format!("quadratic DPE {d}"))?;

    let mut rng = stream(5, "acceptance_kfold", 0);
    for _ in 0..200 {
        let n = rng.random_range(5..500);
        let seed: u64 = rng.random();
        let folds = kfold_split(n, 5, seed).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || format!("n={n} seed={seed}: not a partition"))?;
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        ensure(folds.len() == 5 && spread <= 1, || format!("n={n} seed={seed}: sizes {sizes:?}"))?;
    }
    Ok(format!("offset {m:.6}, trapezoid rel err {rel:.1e}, DPE {d}, 200 partitions"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let (model, batch, targets) = tiny_check_case(0).map_err(|e| e.to_string())?;
    let check = gradient_check(&model, &batch, &targets, 1e-5, 60, 0).map_err(|e| e.to_string())?;
    ensure(check.max_relative_error < 1e-4, || format!("max relative error {:e}", check.max_relative_error))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("max relative error {:.2e} over {} coordinates", check.max_relative_error, check.coords.len()))
}

/// Training recipe used for the learning check.
fn learning_config() -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 1e-3,
        datasets_per_step: 16,
        steps: 2000,
        seed: 1,
        ..TrainConfig::default()
    }
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let (model, _) = train(learning_config(), |r| {
        if r.step % 250 == 0 {
            eprintln!("  step {} loss {:.4}", r.step, r.loss);
        }
    })
    .map_err(|e| e.to_string())?;
    let held_out = PriorConfig { n_samples: 240, ..PriorConfig::default() };
    let (mut beats_mean, mut beats_knn) = (0, 0);
    for i in 0..20u64 {
        let (dgp, data, _) = sample_dataset(&held_out, 1_000_000 + i).map_err(|e| e.to_string())?;
        let obs = Observations::from_dataset(&data);
        let opts = EvalOptions { seed: i, ..EvalOptions::default() };
        let score = |p: &dyn ccgen::eval::CurvePredictor| {
            evaluate_predictor(p, &obs, &dgp, &opts).map(|e| e.report.mise_mean).map_err(|e| e.to_string())
        };
        let (m, c, k) = (score(&model)?, score(&ContextMean)?, score(&KnnBaseline { k: None })?);
        eprintln!("  dgp {i:2}: model {m:.4}  context_mean {c:.4}  knn {k:.4}");
        beats_mean += usize::from(m < c);
        beats_knn += usize::from(m < k);
    }
    let summary = format!("beats context mean {beats_mean}/20, k-NN {beats_knn}/20 in {:.0?}", start.elapsed());
    ensure(beats_mean >= 15 && beats_knn >= 11, || summary.clone())?;
    within_budget(start, Duration::from_secs(1800))?;
    Ok(summary)
}

fn overfit_one_batch() -> Outcome {
    let config = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
    let (_, data, _) = sample_dataset(&config.prior, 77).map_err(|e| e.to_string())?;
    let mut rng = stream(77, "acceptance_overfit", 0);
    let (batch, targets) =
        build_training_batch(&config.model, &data, config.loss, config.target_std, &mut rng).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let losses: Vec<f64> =
        (0..50).map(|_| trainer.step_on_batch(&batch, &targets)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let initial = losses[..20].iter().sum::<f64>() / 20.0;
    let last = losses[30..].iter().sum::<f64>() / 20.0;
    let summary = format!("20-step average {initial:.4} -> {last:.4} (ratio {:.3})", last / initial);
    ensure(last < 0.8 * initial, || summary.clone())?;
    Ok(summary)
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = ccgen::cli::run(std::iter::once("ccgen").chain(args.iter().copied()), &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!("`{}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err)))
    }
}

fn ablation_plumbing() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let axes: [(&str, [&str; 2], [&str; 2]); 4] = [
        ("corruption", ["--corruption", "in_pass"], ["--corruption", "post_hoc_only"]),
        ("positivity", ["--positivity", "on"], ["--positivity", "off"]),
        ("prior", ["--prior", "three_mlp"], ["--prior", "one_mlp"]),
        ("loss", ["--loss", "histogram"], ["--loss", "crps"]),
    ];
    for (axis, a, b) in axes {
        let mut pair = Vec::new();
        for (side, flag) in [("a", a), ("b", b)] {
            let dir = tmp.path().join(format!("{axis}_{side}"));
            let d = dir.to_str().unwrap();
            let data_dir = format!("{d}/data");
            let model_dir = format!("{d}/model");
            let eval_dir = format!("{d}/eval");
            run_cli(&[&["gen", "--seed", "11", "--n-samples", "200", "--out", &data_dir][..], &flag].concat())?;
            run_cli(&[&["train", "--steps", "100", "--seed", "11", "--out", &model_dir][..], &flag].concat())?;
            run_cli(&[
                "eval",
                "--checkpoint",
                &format!("{model_dir}/model.ckpt"),
                "--data",
                &format!("{data_dir}/dataset_0.csv"),
                "--dgp",
                &format!("{data_dir}/dataset_0.dgp.json"),
                "--out",
                &eval_dir,
            ])?;
            let report = std::fs::read_to_string(format!("{eval_dir}/report.txt")).map_err(|e| e.to_string())?;
            ensure(report.contains("mise_mean="), || format!("{axis}/{side}: report lacks MISE"))?;
            pair.push(std::fs::read_to_string(format!("{model_dir}/loss_log.csv")).map_err(|e| e.to_string())?);
        }
        ensure(pair[0] != pair[1], || format!("{axis}: loss logs identical"))?;
    }
    Ok(format!("4 axes end to end with distinct loss logs in {:.0?}", start.elapsed()))
}

fn round_trips() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, data, _) = sample_dataset(&PriorConfig::default(), 21).map_err(|e| e.to_string())?;
    let table = BenchmarkTable::from_dataset(&data);
    let path = tmp.path().join("table.csv");
    write_benchmark_csv(&table, &path).map_err(|e| e.to_string())?;
    let back = read_benchmark_csv(&path).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let pairs = table
        .covariates
        .iter()
        .zip(back.covariates.iter())
        .chain(table.t.iter().zip(&back.t))
        .chain(table.y.iter().zip(&back.y))
        .chain(table.t_test.iter().zip(&back.t_test))
        .chain(table.cepo_test.iter().zip(&back.cepo_test));
    let worst = pairs.map(|(a, b)| rel(*a, *b)).fold(0.0f64, f64::max);
    ensure(back.covariates.dim() == table.covariates.dim(), || "shape changed".into())?;
    ensure(worst <= 1e-9, || format!("CSV relative error {worst:e}"))?;

    let config = TrainConfig {
        model: ToyModelConfig { layer_count: 1, embed_dim: 16, ff_dim: 32, t_encoder_hidden: 16, bin_count: 16, ..ToyModelConfig::toy() },
        prior: PriorConfig { n_samples: 64, ..PriorConfig::default() },
        steps: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train(config.clone(), |_| {}).map_err(|e| e.to_string())?;
    let ckpt = tmp.path().join("model.ckpt");
    checkpoint::save(&model, &ckpt).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
    let mut rng = stream(21, "acceptance_ckpt", 0);
    let (batch, _) =
        build_training_batch(&config.model, &data, LossKind::Histogram, 0.01, &mut rng).map_err(|e| e.to_string())?;
    let before = predict_probs(&model, &batch.tokens).map_err(|e| e.to_string())?;
    let after = predict_probs(&loaded, &batch.tokens).map_err(|e| e.to_string())?;
    ensure(before == after, || "checkpoint predictions differ".into())?;
    Ok(format!("CSV max relative error {worst:.1e}; checkpoint predictions identical"))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "determinism", determinism),
    (2, "prior invariants", prior_invariants),
    (3, "CEPO oracle consistency", cepo_oracle),
    (4, "loss-kernel oracles", loss_kernels),
    (5, "metric oracles", metric_oracles),
    (6, "gradient correctness", gradients),
    (7, "desk-scale learning", desk_scale_learning),
    (8, "overfit one batch", overfit_one_batch),
    (9, "ablation plumbing", ablation_plumbing),
    (10, "format round trips", round_trips),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failures += 1;
                println!("FAIL {id:>2} {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

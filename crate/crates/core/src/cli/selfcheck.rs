//! Fast invariant suite behind `ccgen selfcheck`.

use rand::Rng;

use crate::eval::{dpe, kfold_split, mise, uniform_grid, OptimumMode};
use crate::model::gradcheck::{gradient_check, tiny_check_case};
use crate::ppd::{crps_loss, gaussian_bin_mass, histogram_loss, normal_cdf, BinGrid, HistogramDistribution, Standardizer};
use crate::rng::stream;

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

type Check = fn(&SelfcheckOptions) -> Result<(), String>;

#[derive(Clone, Debug, Default)]
pub struct SelfcheckOptions {
    /// Reverses the bin grid edges to prove the grid check can fail.
    pub reverse_grid: bool,
}

fn grid_under_test(opts: &SelfcheckOptions) -> BinGrid {
    let mut grid = BinGrid::standard(1024);
    if opts.reverse_grid {
        grid.edges.reverse();
    }
    grid
}

fn within(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got:e}, expected {want:e} (tolerance {tol:e})"))
    }
}

fn random_distribution<R: Rng>(rng: &mut R, bins: usize) -> HistogramDistribution {
    let raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    HistogramDistribution { probs: raw.into_iter().map(|v| v / s).collect() }
}

fn check_grid(opts: &SelfcheckOptions) -> Result<(), String> {
    grid_under_test(opts).validate().map_err(|_| "edges are not strictly increasing".into())
}

fn check_bin_mass(opts: &SelfcheckOptions) -> Result<(), String> {
    let grid = grid_under_test(opts);
    let mut rng = stream(1, "selfcheck", 0);
    for _ in 0..50 {
        let mu = rng.random_range(-12.0..12.0);
        let sigma = rng.random_range(0.005..3.0);
        let q = gaussian_bin_mass(mu, sigma, &grid);
        within("total mass", q.probs.iter().sum(), 1.0, 1e-12)?;
        let l = rng.random_range(1..grid.bin_count() - 1);
        let direct = normal_cdf((grid.edges[l + 1] - mu) / sigma) - normal_cdf((grid.edges[l] - mu) / sigma);
        within("interior bin", q.probs[l], direct, 1e-9)?;
    }
    Ok(())
}

fn check_histogram_loss(_: &SelfcheckOptions) -> Result<(), String> {
    let mut rng = stream(2, "selfcheck", 0);
    for bins in [8, 1024] {
        for _ in 0..20 {
            let q = random_distribution(&mut rng, bins);
            let t = random_distribution(&mut rng, bins);
            let mut oracle = 0.0;
            for l in 0..bins {
                oracle -= t.probs[l] * q.probs[l].max(1e-12).ln();
            }
            within("cross-entropy", histogram_loss(&q, &t), oracle, 1e-10)?;
        }
    }
    Ok(())
}

fn check_crps(_: &SelfcheckOptions) -> Result<(), String> {
    for bins in [8, 64, 1024] {
        let grid = BinGrid::standard(bins);
        let w = grid.width();
        let l = bins as f64;
        let closed: f64 = (1..=bins).map(|k| (k as f64 / l - 1.0).powi(2) * w).sum();
        within("uniform CRPS", crps_loss(&HistogramDistribution::uniform(bins), &grid, grid.lo), closed, 1e-10)?;
    }
    Ok(())
}

fn check_standardizer(_: &SelfcheckOptions) -> Result<(), String> {
    let values = [3.0, -1.5, 7.25, 0.0, 2.0];
    let s = Standardizer::fit(&values).map_err(|e| e.to_string())?;
    for v in values {
        within("standardize round trip", s.invert(s.apply(v)), v, 1e-12)?;
    }
    Ok(())
}

fn check_mise(_: &SelfcheckOptions) -> Result<(), String> {
    let grid = uniform_grid(65);
    let truth = vec![grid.iter().map(|t| t.sin()).collect::<Vec<_>>()];
    let shifted = vec![truth[0].iter().map(|v| v + 0.3).collect::<Vec<_>>()];
    within("constant offset", mise(&shifted, &truth, &grid).map_err(|e| e.to_string())?, 0.09, 1e-12)?;
    let zero = vec![vec![0.0; grid.len()]];
    let lin = vec![grid.clone()];
    within("quadratic", mise(&lin, &zero, &grid).map_err(|e| e.to_string())?, 1.0 / 3.0, 1e-3)
}

fn check_dpe(_: &SelfcheckOptions) -> Result<(), String> {
    let mesh = uniform_grid(65);
    let truth = vec![mesh.iter().map(|t| -(t - 0.5) * (t - 0.5)).collect::<Vec<_>>()];
    let pred = vec![mesh.iter().map(|t| -t).collect::<Vec<_>>()];
    within("quadratic", dpe(&pred, &truth, &mesh, OptimumMode::Max).map_err(|e| e.to_string())?, 0.0625, 1e-12)?;
    let shifted = vec![truth[0].iter().map(|v| v + 4.0).collect::<Vec<_>>()];
    within("shift", dpe(&shifted, &truth, &mesh, OptimumMode::Max).map_err(|e| e.to_string())?, 0.0, 0.0)
}

fn check_kfold(_: &SelfcheckOptions) -> Result<(), String> {
    for (n, seed) in [(10, 0), (11, 1), (97, 2)] {
        let folds = kfold_split(n, 5, seed).map_err(|e| e.to_string())?;
        let mut seen = vec![false; n];
        for f in &folds {
            for &i in f {
                if std::mem::replace(&mut seen[i], true) {
                    return Err(format!("index {i} appears twice for n={n}"));
                }
            }
        }
        if seen.contains(&false) {
            return Err(format!("folds miss an index for n={n}"));
        }
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
            return Err(format!("unbalanced folds {sizes:?}"));
        }
    }
    Ok(())
}

fn check_gradients(_: &SelfcheckOptions) -> Result<(), String> {
    let (model, batch, targets) = tiny_check_case(0).map_err(|e| e.to_string())?;
    let check = gradient_check(&model, &batch, &targets, 1e-5, 50, 0).map_err(|e| e.to_string())?;
    if check.max_relative_error < 1e-4 {
        Ok(())
    } else {
        Err(format!("max relative error {:e}", check.max_relative_error))
    }
}

const CHECKS: &[(&str, Check)] = &[
    ("BinGrid monotonicity", check_grid),
    ("gaussian bin mass", check_bin_mass),
    ("histogram loss", check_histogram_loss),
    ("CRPS uniform case", check_crps),
    ("standardizer round trip", check_standardizer),
    ("MISE analytic cases", check_mise),
    ("DPE analytic cases", check_dpe),
    ("k-fold partition", check_kfold),
    ("tiny model gradients", check_gradients),
];

pub fn run_checks(opts: &SelfcheckOptions) -> Vec<CheckOutcome> {
    CHECKS.iter().map(|(name, f)| CheckOutcome { name, result: f(opts) }).collect()
}

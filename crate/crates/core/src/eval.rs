//! Curve-level error metrics, k-fold evaluation and reference predictors.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::covariates::ColumnScaler;
use crate::prior::{Dgp, SampledDgp};
use crate::rng::{permutation, stream};

pub const DEFAULT_GRID_POINTS: usize = 65;
pub const DEFAULT_FOLDS: usize = 5;

/// Which end of a curve counts as optimal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumMode {
    Min,
    Max,
    Monotone,
}

impl fmt::Display for OptimumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimumMode::Min => "min",
            OptimumMode::Max => "max",
            OptimumMode::Monotone => "monotone",
        })
    }
}

impl FromStr for OptimumMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(OptimumMode::Min),
            "max" => Ok(OptimumMode::Max),
            "monotone" => Ok(OptimumMode::Monotone),
            other => Err(Error::InvalidArgument(format!("unknown optimum mode '{other}'"))),
        }
    }
}

/// `n` uniform points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

fn check_curves(pred: &[Vec<f64>], truth: &[Vec<f64>], grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::GridMismatch("grid needs at least two points".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::GridMismatch(format!("{} predicted rows vs {} true rows", pred.len(), truth.len())));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != grid.len() || t.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "curve lengths {} / {} on a {}-point grid",
                p.len(),
                t.len(),
                grid.len()
            )));
        }
    }
    Ok(())
}

/// Mean over rows of the interval-normalized integrated squared error, by the
/// composite trapezoid rule on `grid` (which spans `[grid[0], grid[last]]`).
pub fn mise(pred: &[Vec<f64>], truth: &[Vec<f64>], grid: &[f64]) -> Result<f64> {
    check_curves(pred, truth, grid)?;
    if pred.is_empty() {
        return Err(Error::EmptyTable);
    }
    let span = grid[grid.len() - 1] - grid[0];
    if !(span > 0.0) {
        return Err(Error::GridMismatch("grid must be increasing".into()));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let sq: Vec<f64> = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).collect();
        let integral: f64 = grid
            .windows(2)
            .zip(sq.windows(2))
            .map(|(g, s)| 0.5 * (g[1] - g[0]) * (s[0] + s[1]))
            .sum();
        total += integral / span;
    }
    Ok(total / pred.len() as f64)
}

/// Index of the optimum of `curve`; ties go to the smallest index.
pub fn arg_opt(curve: &[f64], mode: OptimumMode) -> usize {
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate().skip(1) {
        let better = match mode {
            OptimumMode::Max => v > curve[best],
            OptimumMode::Min => v < curve[best],
            OptimumMode::Monotone => false,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Mean squared gap in true outcome between the true and the predicted
/// optimum on `mesh`. `truth` holds the true curves on the same mesh.
pub fn dpe(pred: &[Vec<f64>], truth: &[Vec<f64>], mesh: &[f64], mode: OptimumMode) -> Result<f64> {
    if mode == OptimumMode::Monotone {
        return Err(Error::InvalidArgument("policy error needs an optimum mode of min or max".into()));
    }
    check_curves(pred, truth, mesh)?;
    if pred.is_empty() {
        return Err(Error::EmptyTable);
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let gap = t[arg_opt(t, mode)] - t[arg_opt(p, mode)];
            gap * gap
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Shuffled split of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("cannot split {n} rows into {k} folds")));
    }
    let mut rng = stream(seed, "kfold", 0);
    let perm = permutation(&mut rng, n);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(perm[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

/// Factual `(x, t, y)` rows; the only thing a predictor ever sees as context.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Observations {
    pub fn new(covariates: Array2<f64>, t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != covariates.nrows() || y.len() != covariates.nrows() {
            return Err(Error::DimensionMismatch("observation columns".into()));
        }
        Ok(Observations { covariates, t, y })
    }

    pub fn from_dataset(data: &crate::Dataset) -> Self {
        Observations { covariates: data.covariates.clone(), t: data.t.clone(), y: data.y.clone() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Observations {
            covariates: self.covariates.select(Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Query covariates plus their row indices in the evaluated table.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub rows: Vec<usize>,
    pub covariates: Array2<f64>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn single(&self, i: usize) -> QuerySet {
        QuerySet { rows: vec![self.rows[i]], covariates: self.covariates.select(Axis(0), &[i]) }
    }
}

/// Ground-truth conditional expected outcomes for the rows of a table.
pub trait CurveOracle {
    fn n_rows(&self) -> usize;
    fn cepo(&self, row: usize, t: f64) -> Result<f64>;

    fn curve(&self, row: usize, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.cepo(row, t)).collect()
    }
}

impl CurveOracle for SampledDgp {
    fn n_rows(&self) -> usize {
        SampledDgp::n_rows(self)
    }
    fn cepo(&self, row: usize, t: f64) -> Result<f64> {
        self.query_cepo(row, t)
    }
}

impl CurveOracle for Dgp {
    fn n_rows(&self) -> usize {
        Dgp::n_rows(self)
    }
    fn cepo(&self, row: usize, t: f64) -> Result<f64> {
        self.query_cepo(row, t)
    }
}

/// Anything mapping a context and query covariates to outcome curves.
pub trait CurvePredictor {
    fn name(&self) -> String;

    /// One curve on `grid` per query row.
    fn predict_curves(&self, context: &Observations, queries: &QuerySet, grid: &[f64]) -> Result<Vec<Vec<f64>>>;

    /// One prediction per query row at that row's own treatment `t[i]`.
    fn predict_points(&self, context: &Observations, queries: &QuerySet, t: &[f64]) -> Result<Vec<f64>> {
        (0..queries.len())
            .map(|i| Ok(self.predict_curves(context, &queries.single(i), &[t[i]])?[0][0]))
            .collect()
    }
}

/// Reads the true curves straight from the oracle.
pub struct OraclePredictor<'a> {
    pub oracle: &'a dyn CurveOracle,
}

impl CurvePredictor for OraclePredictor<'_> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_curves(&self, _context: &Observations, queries: &QuerySet, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        queries.rows.iter().map(|&r| self.oracle.curve(r, grid)).collect()
    }
}

/// Flat curve at the context outcome mean.
pub struct ContextMean;

pub fn baseline_context_mean(context: &Observations, grid: &[f64]) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(vec![crate::stats::mean(&context.y); grid.len()])
}

impl CurvePredictor for ContextMean {
    fn name(&self) -> String {
        "context_mean".into()
    }

    fn predict_curves(&self, context: &Observations, queries: &QuerySet, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let curve = baseline_context_mean(context, grid)?;
        Ok(vec![curve; queries.len()])
    }
}

/// Mean outcome of the nearest context rows in standardized `(x, t)` space.
pub struct KnnBaseline {
    /// Neighbour count; `None` uses `round(sqrt(context size))`.
    pub k: Option<usize>,
}

/// Joint `(x, t)` scaler fitted on a context.
struct JointScaler {
    x: ColumnScaler,
    t_mean: f64,
    t_std: f64,
}

impl JointScaler {
    fn fit(context: &Observations) -> Self {
        let s = crate::stats::pop_std(&context.t);
        JointScaler {
            x: ColumnScaler::fit(&context.covariates),
            t_mean: crate::stats::mean(&context.t),
            t_std: if s > 1e-12 { s } else { 1.0 },
        }
    }

    fn point(&self, x: ndarray::ArrayView1<f64>, t: f64) -> Vec<f64> {
        let mut p: Vec<f64> = x.iter().enumerate().map(|(j, &v)| self.x.scale(j, v)).collect();
        p.push((t - self.t_mean) / self.t_std);
        p
    }
}

fn knn_mean(points: &[Vec<f64>], y: &[f64], query: &[f64], k: usize) -> f64 {
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.clamp(1, dist.len());
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distance"));
    }
    dist[..k].iter().map(|&(_, i)| y[i]).sum::<f64>() / k as f64
}

/// Mean `y` of the `k` context rows nearest to `(x, t)`.
pub fn baseline_knn_cepo(context: &Observations, x: &[f64], t: f64, k: usize) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::EmptyTable);
    }
    if x.len() != context.covariates.ncols() {
        return Err(Error::DimensionMismatch("query covariates".into()));
    }
    let scaler = JointScaler::fit(context);
    let points: Vec<Vec<f64>> = (0..context.len())
        .map(|i| scaler.point(context.covariates.row(i), context.t[i]))
        .collect();
    let q = scaler.point(ndarray::ArrayView1::from(x), t);
    Ok(knn_mean(&points, &context.y, &q, k))
}

impl KnnBaseline {
    fn neighbours(&self, context_len: usize) -> usize {
        self.k.unwrap_or_else(|| (context_len as f64).sqrt().round() as usize).max(1)
    }
}

impl CurvePredictor for KnnBaseline {
    fn name(&self) -> String {
        "knn".into()
    }

    fn predict_curves(&self, context: &Observations, queries: &QuerySet, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        if context.is_empty() {
            return Err(Error::EmptyTable);
        }
        let k = self.neighbours(context.len());
        let scaler = JointScaler::fit(context);
        let points: Vec<Vec<f64>> = (0..context.len())
            .map(|i| scaler.point(context.covariates.row(i), context.t[i]))
            .collect();
        Ok((0..queries.len())
            .map(|i| {
                grid.iter()
                    .map(|&t| knn_mean(&points, &context.y, &scaler.point(queries.covariates.row(i), t), k))
                    .collect()
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpeStatus {
    Computed,
    /// The truth is declared monotone, so there is no interior optimum.
    SkippedMonotone,
    /// No oracle curves, only pointwise ground truth.
    Unavailable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub n_rows: usize,
    pub folds: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub optimum_mode: OptimumMode,
    /// `trapezoid` with an oracle, `monte_carlo` from pointwise ground truth.
    pub mise_method: String,
    pub per_fold_mise: Vec<f64>,
    pub per_fold_dpe: Vec<f64>,
    pub mise_mean: f64,
    pub mise_std: f64,
    pub dpe_mean: Option<f64>,
    pub dpe_std: Option<f64>,
    pub dpe_status: DpeStatus,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let mut s = String::new();
        let _ = writeln!(s, "predictor={}", self.predictor);
        let _ = writeln!(s, "n_rows={}", self.n_rows);
        let _ = writeln!(s, "folds={}", self.folds);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "grid_points={}", self.grid_points);
        let _ = writeln!(s, "optimum_mode={}", self.optimum_mode);
        let _ = writeln!(s, "mise_method={}", self.mise_method);
        let _ = writeln!(s, "mise_mean={}", self.mise_mean);
        let _ = writeln!(s, "mise_std={}", self.mise_std);
        let _ = writeln!(s, "dpe_status={}", serde_json::to_value(self.dpe_status).unwrap().as_str().unwrap());
        let _ = writeln!(s, "dpe_mean={}", opt(self.dpe_mean));
        let _ = writeln!(s, "dpe_std={}", opt(self.dpe_std));
        let _ = writeln!(s, "per_fold_mise={}", list(&self.per_fold_mise));
        let _ = writeln!(s, "per_fold_dpe={}", list(&self.per_fold_dpe));
        s
    }

    pub fn to_fold_csv(&self) -> String {
        let mut s = String::from("fold,mise,dpe\n");
        for (f, m) in self.per_fold_mise.iter().enumerate() {
            let d = self.per_fold_dpe.get(f).map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(s, "{f},{m},{d}");
        }
        s
    }
}

/// One point of a predicted-vs-true curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub fold: usize,
    pub row: usize,
    pub t: f64,
    pub predicted: f64,
    pub truth: f64,
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("fold,row,t,predicted,true\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.fold, p.row, p.t, p.predicted, p.truth);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub optimum_mode: OptimumMode,
    pub keep_curves: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            grid: uniform_grid(DEFAULT_GRID_POINTS),
            folds: DEFAULT_FOLDS,
            seed: 0,
            optimum_mode: OptimumMode::Max,
            keep_curves: false,
        }
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    pub curves: Vec<CurvePoint>,
}

fn fold_parts(data: &Observations, fold: &[usize], all: &[Vec<usize>], f: usize) -> (Observations, QuerySet) {
    let context_idx: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != f)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let context = data.select_rows(&context_idx);
    let queries = QuerySet { rows: fold.to_vec(), covariates: data.covariates.select(Axis(0), fold) };
    (context, queries)
}

fn summarize(values: &[f64]) -> (f64, f64) {
    (crate::stats::mean(values), crate::stats::pop_std(values))
}

/// k-fold evaluation against oracle curves: each fold is predicted from the
/// factual rows of all other folds.
pub fn evaluate_predictor(
    predictor: &dyn CurvePredictor,
    data: &Observations,
    oracle: &dyn CurveOracle,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if oracle.n_rows() != data.len() {
        return Err(Error::DimensionMismatch(format!("oracle has {} rows, data {}", oracle.n_rows(), data.len())));
    }
    let folds = kfold_split(data.len(), opts.folds, opts.seed)?;
    let grid = &opts.grid;
    let mut per_fold_mise = Vec::with_capacity(folds.len());
    let mut per_fold_dpe = Vec::new();
    let mut curves = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let (context, queries) = fold_parts(data, fold, &folds, f);
        let pred = predictor.predict_curves(&context, &queries, grid)?;
        let truth: Vec<Vec<f64>> = fold.iter().map(|&r| oracle.curve(r, grid)).collect::<Result<_>>()?;
        if pred.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        per_fold_mise.push(mise(&pred, &truth, grid)?);
        if opts.optimum_mode != OptimumMode::Monotone {
            per_fold_dpe.push(dpe(&pred, &truth, grid, opts.optimum_mode)?);
        }
        if opts.keep_curves {
            for (i, &row) in fold.iter().enumerate() {
                for (g, &t) in grid.iter().enumerate() {
                    curves.push(CurvePoint { fold: f, row, t, predicted: pred[i][g], truth: truth[i][g] });
                }
            }
        }
    }
    let (mise_mean, mise_std) = summarize(&per_fold_mise);
    let (dpe_mean, dpe_std, dpe_status) = if per_fold_dpe.is_empty() {
        (None, None, DpeStatus::SkippedMonotone)
    } else {
        let (m, s) = summarize(&per_fold_dpe);
        (Some(m), Some(s), DpeStatus::Computed)
    };
    Ok(Evaluation {
        report: EvalReport {
            predictor: predictor.name(),
            n_rows: data.len(),
            folds: folds.len(),
            seed: opts.seed,
            grid_points: grid.len(),
            optimum_mode: opts.optimum_mode,
            mise_method: "trapezoid".into(),
            per_fold_mise,
            per_fold_dpe,
            mise_mean,
            mise_std,
            dpe_mean,
            dpe_std,
            dpe_status,
        },
        curves,
    })
}

/// k-fold evaluation from pointwise ground truth `(t_test, cepo_test)` only.
/// With `t_test` uniform on the treatment interval, the mean squared error at
/// those points is a Monte Carlo estimate of MISE. Policy error needs whole
/// curves and is reported as unavailable.
pub fn evaluate_pointwise(
    predictor: &dyn CurvePredictor,
    data: &Observations,
    t_test: &[f64],
    cepo_test: &[f64],
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if t_test.len() != data.len() || cepo_test.len() != data.len() {
        return Err(Error::DimensionMismatch("test columns".into()));
    }
    let folds = kfold_split(data.len(), opts.folds, opts.seed)?;
    let mut per_fold_mise = Vec::with_capacity(folds.len());
    let mut curves = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let (context, queries) = fold_parts(data, fold, &folds, f);
        let t: Vec<f64> = fold.iter().map(|&r| t_test[r]).collect();
        let pred = predictor.predict_points(&context, &queries, &t)?;
        let mut sq = 0.0;
        for (i, &row) in fold.iter().enumerate() {
            sq += (pred[i] - cepo_test[row]).powi(2);
            if opts.keep_curves {
                curves.push(CurvePoint { fold: f, row, t: t[i], predicted: pred[i], truth: cepo_test[row] });
            }
        }
        per_fold_mise.push(sq / fold.len() as f64);
    }
    let (mise_mean, mise_std) = summarize(&per_fold_mise);
    Ok(Evaluation {
        report: EvalReport {
            predictor: predictor.name(),
            n_rows: data.len(),
            folds: folds.len(),
            seed: opts.seed,
            grid_points: 0,
            optimum_mode: opts.optimum_mode,
            mise_method: "monte_carlo".into(),
            per_fold_mise,
            per_fold_dpe: Vec::new(),
            mise_mean,
            mise_std,
            dpe_mean: None,
            dpe_std: None,
            dpe_status: DpeStatus::Unavailable,
        },
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arg_opt_ties_take_smallest_t() {
        assert_eq!(arg_opt(&[1.0, 3.0, 3.0], OptimumMode::Max), 1);
        assert_eq!(arg_opt(&[2.0, 0.0, 0.0], OptimumMode::Min), 1);
    }

    #[test]
    fn context_mean_of_two_points() {
        let ctx = Observations::new(Array2::zeros((2, 1)), vec![0.1, 0.2], vec![1.0, 3.0]).unwrap();
        assert_eq!(baseline_context_mean(&ctx, &[0.0, 0.5, 1.0]).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn knn_full_neighbourhood_is_context_mean() {
        let x = Array2::from_shape_fn((5, 2), |(i, j)| (i * 3 + j) as f64);
        let ctx = Observations::new(x, vec![0.1, 0.5, 0.2, 0.9, 0.4], vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        let v = baseline_knn_cepo(&ctx, &[0.0, 0.0], 0.3, 5).unwrap();
        assert!((v - 6.2).abs() < 1e-12);
        let v = baseline_knn_cepo(&ctx, &[6.0, 7.0], 0.2, 1).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn report_text_lists_folds() {
        let r = EvalReport {
            predictor: "x".into(),
            n_rows: 10,
            folds: 2,
            seed: 1,
            grid_points: 65,
            optimum_mode: OptimumMode::Monotone,
            mise_method: "trapezoid".into(),
            per_fold_mise: vec![1.0, 3.0],
            per_fold_dpe: vec![],
            mise_mean: 2.0,
            mise_std: 1.0,
            dpe_mean: None,
            dpe_std: None,
            dpe_status: DpeStatus::SkippedMonotone,
        };
        let t = r.to_text();
        assert!(t.contains("dpe_status=skipped_monotone"));
        assert!(t.contains("per_fold_mise=1;3"));
        assert_eq!(r.to_fold_csv(), "fold,mise,dpe\n0,1,NA\n1,3,NA\n");
    }
}

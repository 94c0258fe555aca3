//! Semi-synthetic benchmark scenarios and the benchmark CSV format.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alt_priors::logistic;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{CurveOracle, Observations, OptimumMode};
use crate::prior::covariates::ColumnScaler;
use crate::rng::{standard_normal, stream};

pub const BUILTIN_ROWS: usize = 2000;
pub const BUILTIN_COLUMNS: usize = 8;

/// `x_0..x_{K-1}, t, y, t_test, cepo_test`.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkTable {
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub t_test: Vec<f64>,
    pub cepo_test: Vec<f64>,
}

pub fn benchmark_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..k).map(|j| format!("x_{j}")).collect();
    h.extend(["t", "y", "t_test", "cepo_test"].map(String::from));
    h
}

impl BenchmarkTable {
    pub fn n_rows(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if [&self.t, &self.y, &self.t_test, &self.cepo_test].iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("benchmark columns".into()));
        }
        let finite = self.covariates.iter().all(|v| v.is_finite())
            && [&self.t, &self.y, &self.t_test, &self.cepo_test].iter().all(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFiniteGeneration("benchmark table"));
        }
        Ok(())
    }

    /// Factual rows plus the first counterfactual draw of a prior dataset.
    pub fn from_dataset(data: &Dataset) -> Self {
        let (t_cf, cepo_cf) = data.counterfactual(0);
        BenchmarkTable {
            covariates: data.covariates.clone(),
            t: data.t.clone(),
            y: data.y.clone(),
            t_test: t_cf.to_vec(),
            cepo_test: cepo_cf.to_vec(),
        }
    }

    pub fn observations(&self) -> Observations {
        Observations { covariates: self.covariates.clone(), t: self.t.clone(), y: self.y.clone() }
    }
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn benchmark_csv_string(table: &BenchmarkTable) -> String {
    let k = table.n_covariates();
    let mut out = benchmark_header(k).join(",");
    out.push('\n');
    for i in 0..table.n_rows() {
        let mut cells: Vec<String> = table.covariates.row(i).iter().map(|&v| format_value(v)).collect();
        for col in [&table.t, &table.y, &table.t_test, &table.cepo_test] {
            cells.push(format_value(col[i]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_benchmark_csv(table: &BenchmarkTable, path: impl AsRef<Path>) -> Result<()> {
    table.validate()?;
    let path = path.as_ref();
    std::fs::write(path, benchmark_csv_string(table)).map_err(|e| Error::io(path, e))
}

fn parse_cell(s: &str, row: usize, column: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("'{s}' is not a number"),
    })
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::HeaderMismatch(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: i + 1, column: String::new(), message: e.to_string() })?;
        records.push(rec);
    }
    Ok((header, records))
}

/// Reads a benchmark table; the header must be exactly the benchmark header.
pub fn read_benchmark_csv(path: impl AsRef<Path>) -> Result<BenchmarkTable> {
    let path = path.as_ref();
    let (header, records) = read_records(path)?;
    let k = header.iter().filter(|h| h.starts_with("x_")).count();
    if header != benchmark_header(k) {
        let missing: Vec<&str> = ["t", "y", "t_test", "cepo_test"]
            .into_iter()
            .filter(|c| !header.iter().any(|h| h == c))
            .collect();
        let hint = if missing.contains(&"cepo_test") || missing.contains(&"t_test") {
            "; MISE and DPE need the t_test/cepo_test ground-truth columns"
        } else {
            ""
        };
        return Err(Error::HeaderMismatch(format!(
            "expected '{}', found '{}'{hint}",
            benchmark_header(k).join(","),
            header.join(",")
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = records.len();
    let mut covariates = Array2::zeros((n, k));
    let mut cols = vec![Vec::with_capacity(n); 4];
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return Err(Error::Parse { row: i + 1, column: String::new(), message: "wrong number of cells".into() });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell, i + 1, &header[j])?;
            if j < k {
                covariates[(i, j)] = v;
            } else {
                cols[j - k].push(v);
            }
        }
    }
    let cepo_test = cols.pop().unwrap();
    let t_test = cols.pop().unwrap();
    let y = cols.pop().unwrap();
    let t = cols.pop().unwrap();
    let table = BenchmarkTable { covariates, t, y, t_test, cepo_test };
    table.validate()?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    /// `n x k` standard normal columns with mild correlation.
    Builtin { rows: usize, columns: usize },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateTable {
    pub values: Array2<f64>,
    pub columns: Vec<String>,
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | "?")
}

/// Numeric CSV with a header row. Columns with no numeric cells are coded as
/// categories in order of first appearance; rows with a missing cell are
/// dropped.
pub fn load_covariate_file(path: impl AsRef<Path>) -> Result<CovariateTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let (columns, records) = read_records(path)?;
    let kept: Vec<&csv::StringRecord> = records.iter().filter(|r| !r.iter().any(is_missing)).collect();
    let dropped_rows = records.len() - kept.len();
    if dropped_rows > 0 {
        info!("{}: dropped {dropped_rows} rows with missing values", path.display());
    }
    if kept.is_empty() || columns.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut values = Array2::zeros((kept.len(), columns.len()));
    for (j, name) in columns.iter().enumerate() {
        let numeric = kept.iter().any(|r| r.get(j).is_some_and(|c| c.parse::<f64>().is_ok()));
        let mut codes: HashMap<&str, usize> = HashMap::new();
        for (i, rec) in kept.iter().enumerate() {
            let cell = rec.get(j).ok_or_else(|| Error::Parse {
                row: i + 1,
                column: name.clone(),
                message: "missing cell".into(),
            })?;
            values[(i, j)] = if numeric {
                let v = parse_cell(cell, i + 1, name)?;
                if !v.is_finite() {
                    return Err(Error::Parse { row: i + 1, column: name.clone(), message: format!("'{cell}' is not finite") });
                }
                v
            } else {
                let next = codes.len();
                *codes.entry(cell).or_insert(next) as f64
            };
        }
    }
    Ok(CovariateTable { values, columns, dropped_rows })
}

fn builtin_covariates(rows: usize, columns: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, "builtin_covariates", 0);
    let mut x = Array2::zeros((rows, columns));
    for i in 0..rows {
        let common = standard_normal(&mut rng);
        for j in 0..columns {
            x[(i, j)] = 0.6 * standard_normal(&mut rng) + 0.4 * common;
        }
    }
    x
}

pub fn load_covariates(source: &CovariateSource, seed: u64) -> Result<Array2<f64>> {
    match source {
        CovariateSource::Builtin { rows, columns } => Ok(builtin_covariates(*rows, *columns, seed)),
        CovariateSource::File(path) => Ok(load_covariate_file(path)?.values),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `mu = a(x) * |t - t*(x)|` with the optimum `t*(x)` in `[0.1, 0.9]`.
    VShape,
    /// `mu = b(x) * t / (t + c(x))`, `b, c > 0`.
    MonotoneSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub covariate_source: CovariateSource,
    pub mechanism: Mechanism,
    pub outcome_noise_std: f64,
    pub optimum_mode: OptimumMode,
}

pub const BUILTIN_SCENARIOS: [&str; 2] = ["vshape", "monotone_saturating"];

pub fn builtin_scenario(id: &str) -> Result<Scenario> {
    let source = CovariateSource::Builtin { rows: BUILTIN_ROWS, columns: BUILTIN_COLUMNS };
    match id {
        "vshape" => Ok(Scenario {
            name: id.into(),
            covariate_source: source,
            mechanism: Mechanism::VShape,
            outcome_noise_std: 0.1,
            optimum_mode: OptimumMode::Min,
        }),
        "monotone_saturating" => Ok(Scenario {
            name: id.into(),
            covariate_source: source,
            mechanism: Mechanism::MonotoneSaturating,
            outcome_noise_std: 0.1,
            optimum_mode: OptimumMode::Monotone,
        }),
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

/// Covariate indices read by each side of a scenario.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSets {
    pub treatment: Vec<usize>,
    pub outcome: Vec<usize>,
}

impl InputSets {
    /// The first `ceil(k/2)` columns are shared; the rest alternate between
    /// treatment-only and outcome-only.
    pub fn for_columns(k: usize) -> Self {
        let shared = k.div_ceil(2).max(1).min(k);
        let mut treatment: Vec<usize> = (0..shared).collect();
        let mut outcome = treatment.clone();
        for j in shared..k {
            if (j - shared) % 2 == 0 {
                treatment.push(j);
            } else {
                outcome.push(j);
            }
        }
        InputSets { treatment, outcome }
    }

    pub fn shared(&self) -> usize {
        self.treatment.iter().filter(|j| self.outcome.contains(j)).count()
    }
}

/// Deterministic weight for the `i`-th of `n` inputs of map `map`.
fn weight(map: usize, i: usize, n: usize) -> f64 {
    let sign = if (i + map) % 2 == 0 { 1.0 } else { -1.0 };
    sign * (1.0 + 0.5 * ((i + 2 * map) % 3) as f64) / (n as f64).sqrt()
}

fn index(z: &[f64], inputs: &[usize], map: usize) -> f64 {
    inputs.iter().enumerate().map(|(i, &j)| weight(map, i, inputs.len()) * z[j]).sum()
}

/// A scenario bound to a covariate matrix: the scaler is fitted once, so
/// the dose-response map is a fixed function of the raw covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedScenario {
    pub scenario: Scenario,
    pub scaler: ColumnScaler,
    pub inputs: InputSets,
}

impl Scenario {
    pub fn fit(&self, x: &Array2<f64>) -> FittedScenario {
        FittedScenario {
            scenario: self.clone(),
            scaler: ColumnScaler::fit(x),
            inputs: InputSets::for_columns(x.ncols()),
        }
    }
}

impl FittedScenario {
    fn scaled(&self, x_row: &[f64]) -> Vec<f64> {
        x_row.iter().enumerate().map(|(j, &v)| self.scaler.scale(j, v)).collect()
    }

    /// Treatment for every row, min-max scaled to `[0, 1]`.
    pub fn treatment<R: Rng + ?Sized>(&self, x: &Array2<f64>, rng: &mut R) -> Vec<f64> {
        let raw: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|row| {
                let z = self.scaled(row.as_slice().expect("standard layout"));
                logistic(index(&z, &self.inputs.treatment, 0) + 0.5 * standard_normal(rng))
            })
            .collect();
        let (lo, hi) = crate::stats::min_max(&raw);
        if hi > lo {
            raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.5; raw.len()]
        }
    }

    /// Row-specific optimum for the V-shape mechanism.
    pub fn optimum(&self, x_row: &[f64]) -> f64 {
        let z = self.scaled(x_row);
        0.1 + 0.8 * logistic(index(&z, &self.inputs.outcome, 1))
    }

    pub fn dose_response(&self, x_row: &[f64], t: f64) -> f64 {
        let z = self.scaled(x_row);
        match self.scenario.mechanism {
            Mechanism::VShape => {
                let t_star = 0.1 + 0.8 * logistic(index(&z, &self.inputs.outcome, 1));
                let slope = 2.0 + (index(&z, &self.inputs.outcome, 2)).tanh();
                slope * (t - t_star).abs()
            }
            Mechanism::MonotoneSaturating => {
                let scale = 1.5 + (index(&z, &self.inputs.outcome, 1)).tanh();
                let half = 0.1 + 0.4 * logistic(index(&z, &self.inputs.outcome, 2));
                scale * t / (t + half)
            }
        }
    }
}

/// Scenario realization together with its ground-truth oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub table: BenchmarkTable,
    pub fitted: FittedScenario,
}

impl CurveOracle for Realization {
    fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    fn cepo(&self, row: usize, t: f64) -> Result<f64> {
        if row >= self.n_rows() {
            return Err(Error::RowOutOfRange { row, rows: self.n_rows() });
        }
        let x = self.table.covariates.row(row);
        Ok(self.fitted.dose_response(x.as_slice().expect("standard layout"), t))
    }
}

pub fn realize_scenario(scenario: &Scenario, seed: u64) -> Result<Realization> {
    let x = load_covariates(&scenario.covariate_source, seed)?;
    realize_with_covariates(scenario, x, seed)
}

pub fn realize_with_covariates(scenario: &Scenario, x: Array2<f64>, seed: u64) -> Result<Realization> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyTable);
    }
    let x = x.as_standard_layout().to_owned();
    let fitted = scenario.fit(&x);
    let mut rng = stream(seed, "scenario", 0);
    let t = fitted.treatment(&x, &mut rng);
    let n = x.nrows();
    let mut y = Vec::with_capacity(n);
    let mut t_test = Vec::with_capacity(n);
    let mut cepo_test = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let row = row.as_slice().expect("standard layout");
        let noise = if scenario.outcome_noise_std > 0.0 {
            scenario.outcome_noise_std * standard_normal(&mut rng)
        } else {
            0.0
        };
        y.push(fitted.dose_response(row, t[i]) + noise);
        let tt: f64 = rng.random::<f64>();
        t_test.push(tt);
        cepo_test.push(fitted.dose_response(row, tt));
    }
    let table = BenchmarkTable { covariates: x, t, y, t_test, cepo_test };
    table.validate()?;
    Ok(Realization { table, fitted })
}

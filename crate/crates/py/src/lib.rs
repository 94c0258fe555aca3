//! Python bindings. Tables and curves cross the boundary as plain lists.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ccgen::eval::{
    self, ContextMean, CurveOracle, CurvePredictor, EvalOptions, EvalReport, KnnBaseline, Observations, OptimumMode,
    OraclePredictor,
};
use ccgen::model::{self, checkpoint, LossKind, OptimizerKind, TrainConfig};
use ccgen::ppd::{self, BinGrid, HistogramDistribution};
use ccgen::prior::{self, CorruptionMode, PriorConfig, PriorKind, SampledDgp};
use ccgen::scenario::{self, BenchmarkTable};

fn py_err(e: ccgen::Error) -> PyErr {
    match e {
        ccgen::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("ragged covariate rows"));
    }
    Ok(Array2::from_shape_fn((rows.len(), k), |(i, j)| rows[i][j]))
}

fn distribution(probs: Vec<f64>) -> PyResult<HistogramDistribution> {
    HistogramDistribution::new(probs).map_err(py_err)
}

/// Observed benchmark table with pointwise ground truth.
#[pyclass(get_all, skip_from_py_object, name = "Table")]
#[derive(Clone)]
pub struct PyTable {
    covariates: Vec<Vec<f64>>,
    t: Vec<f64>,
    y: Vec<f64>,
    t_test: Vec<f64>,
    cepo_test: Vec<f64>,
}

impl From<&BenchmarkTable> for PyTable {
    fn from(t: &BenchmarkTable) -> Self {
        PyTable {
            covariates: to_rows(&t.covariates),
            t: t.t.clone(),
            y: t.y.clone(),
            t_test: t.t_test.clone(),
            cepo_test: t.cepo_test.clone(),
        }
    }
}

impl PyTable {
    fn observations(&self) -> PyResult<Observations> {
        Observations::new(from_rows(&self.covariates)?, self.t.clone(), self.y.clone()).map_err(py_err)
    }
}

#[pymethods]
impl PyTable {
    fn __len__(&self) -> usize {
        self.t.len()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let table = BenchmarkTable {
            covariates: from_rows(&self.covariates)?,
            t: self.t.clone(),
            y: self.y.clone(),
            t_test: self.t_test.clone(),
            cepo_test: self.cepo_test.clone(),
        };
        scenario::write_benchmark_csv(&table, path).map_err(py_err)
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(PyTable::from(&scenario::read_benchmark_csv(path).map_err(py_err)?))
    }
}

/// A sampled data-generating process with its outcome oracle.
#[pyclass(name = "Dgp")]
pub struct PyDgp {
    inner: SampledDgp,
}

#[pymethods]
impl PyDgp {
    #[getter]
    fn prior(&self) -> String {
        self.inner.kind().to_string()
    }

    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    fn query_cepo(&self, row: usize, t: f64) -> PyResult<f64> {
        self.inner.query_cepo(row, t).map_err(py_err)
    }

    fn cepo_curve(&self, row: usize, grid: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.cepo_curve(row, &grid).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (prior="three_mlp", seed=0, n_samples=2048, positivity=true, corruption="in_pass"))]
fn sample_dataset(prior: &str, seed: u64, n_samples: usize, positivity: bool, corruption: &str) -> PyResult<(PyDgp, PyTable)> {
    let kind: PriorKind = prior.parse().map_err(py_err)?;
    let corruption = match corruption {
        "in_pass" => CorruptionMode::InPass,
        "post_hoc_only" => CorruptionMode::PostHocOnly,
        other => return Err(PyValueError::new_err(format!("unknown corruption mode '{other}'"))),
    };
    let config = PriorConfig { prior: kind, n_samples, positivity, corruption, ..PriorConfig::default() };
    let (dgp, data, _) = prior::sample_dataset(&config, seed).map_err(py_err)?;
    Ok((PyDgp { inner: dgp }, PyTable::from(&BenchmarkTable::from_dataset(&data))))
}

#[pyfunction]
#[pyo3(signature = (id, seed=0))]
fn realize_scenario(id: &str, seed: u64) -> PyResult<PyTable> {
    let s = scenario::builtin_scenario(id).map_err(py_err)?;
    Ok(PyTable::from(&scenario::realize_scenario(&s, seed).map_err(py_err)?.table))
}

#[pyfunction]
#[pyo3(signature = (mu, sigma, bins=ppd::DEFAULT_BINS, lo=ppd::DEFAULT_LO, hi=ppd::DEFAULT_HI))]
fn gaussian_bin_mass(mu: f64, sigma: f64, bins: usize, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    let grid = BinGrid::new(bins, lo, hi).map_err(py_err)?;
    Ok(ppd::gaussian_bin_mass(mu, sigma, &grid).probs)
}

#[pyfunction]
fn histogram_loss(q: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    if q.len() != target.len() {
        return Err(PyValueError::new_err("q and target differ in length"));
    }
    Ok(ppd::histogram_loss(&distribution(q)?, &distribution(target)?))
}

#[pyfunction]
#[pyo3(signature = (q, lo=ppd::DEFAULT_LO, hi=ppd::DEFAULT_HI))]
fn histogram_mean(q: Vec<f64>, lo: f64, hi: f64) -> PyResult<f64> {
    let grid = BinGrid::new(q.len(), lo, hi).map_err(py_err)?;
    Ok(ppd::histogram_mean(&distribution(q)?, &grid))
}

#[pyfunction]
#[pyo3(signature = (q, y_true, lo=ppd::DEFAULT_LO, hi=ppd::DEFAULT_HI))]
fn crps_loss(q: Vec<f64>, y_true: f64, lo: f64, hi: f64) -> PyResult<f64> {
    let grid = BinGrid::new(q.len(), lo, hi).map_err(py_err)?;
    Ok(ppd::crps_loss(&distribution(q)?, &grid, y_true))
}

#[pyfunction]
fn mise(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, grid: Vec<f64>) -> PyResult<f64> {
    eval::mise(&pred, &truth, &grid).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pred, truth, mesh, mode="max"))]
fn dpe(pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>, mesh: Vec<f64>, mode: &str) -> PyResult<f64> {
    let mode: OptimumMode = mode.parse().map_err(py_err)?;
    eval::dpe(&pred, &truth, &mesh, mode).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (n, k=5, seed=0))]
fn kfold_split(n: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    eval::kfold_split(n, k, seed).map_err(py_err)
}

/// Trained (or freshly initialized) in-context curve estimator.
#[pyclass(name = "ToyModel")]
pub struct PyToyModel {
    inner: model::ToyModel,
}

#[pymethods]
impl PyToyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyToyModel { inner: checkpoint::load(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Curve for covariates `x` over `grid`, conditioned on the context table.
    fn predict_itrc(&self, context: &PyTable, x: Vec<f64>, grid: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_itrc(&context.observations()?, &x, &grid).map_err(py_err)
    }
}

/// Trains on the 3-MLP prior and returns the model and per-step losses.
#[pyfunction]
#[pyo3(signature = (steps, seed=0, loss="histogram", optimizer="sgd_momentum", learning_rate=1e-3, datasets_per_step=1, train_rows=256))]
fn train(
    py: Python<'_>,
    steps: usize,
    seed: u64,
    loss: &str,
    optimizer: &str,
    learning_rate: f64,
    datasets_per_step: usize,
    train_rows: usize,
) -> PyResult<(PyToyModel, Vec<f64>)> {
    let loss: LossKind = loss.parse().map_err(py_err)?;
    let optimizer: OptimizerKind = optimizer.parse().map_err(py_err)?;
    let base = TrainConfig::default();
    let config = TrainConfig {
        steps,
        seed,
        loss,
        optimizer,
        learning_rate,
        datasets_per_step,
        prior: PriorConfig { n_samples: train_rows, ..base.prior.clone() },
        ..base
    };
    let (model, log) = py.detach(|| model::train(config, |_| {})).map_err(py_err)?;
    Ok((PyToyModel { inner: model }, log.iter().map(|r| r.loss).collect()))
}

#[pyclass(get_all, name = "Report")]
pub struct PyReport {
    predictor: String,
    mise_mean: f64,
    mise_std: f64,
    dpe_mean: Option<f64>,
    per_fold_mise: Vec<f64>,
    text: String,
}

impl From<EvalReport> for PyReport {
    fn from(r: EvalReport) -> Self {
        PyReport {
            text: r.to_text(),
            predictor: r.predictor,
            mise_mean: r.mise_mean,
            mise_std: r.mise_std,
            dpe_mean: r.dpe_mean,
            per_fold_mise: r.per_fold_mise,
        }
    }
}

/// Cross-validated MISE/DPE of a predictor against a DGP's oracle curves.
/// `predictor` is a `ToyModel` or one of "oracle", "context_mean", "knn".
#[pyfunction]
#[pyo3(signature = (predictor, dgp, table, folds=5, grid_points=65, seed=0, mode="max"))]
fn evaluate(
    predictor: &Bound<'_, PyAny>,
    dgp: &PyDgp,
    table: &PyTable,
    folds: usize,
    grid_points: usize,
    seed: u64,
    mode: &str,
) -> PyResult<PyReport> {
    if grid_points < 2 {
        return Err(PyValueError::new_err("grid_points must be at least 2"));
    }
    let opts = EvalOptions {
        grid: eval::uniform_grid(grid_points),
        folds,
        seed,
        optimum_mode: mode.parse().map_err(py_err)?,
        keep_curves: false,
    };
    let data = table.observations()?;
    let oracle: &dyn CurveOracle = &dgp.inner;
    let run = |p: &dyn CurvePredictor| eval::evaluate_predictor(p, &data, oracle, &opts).map_err(py_err);
    let evaluation = if let Ok(m) = predictor.cast::<PyToyModel>() {
        run(&m.borrow().inner)?
    } else {
        match predictor.extract::<String>()?.as_str() {
            "oracle" => run(&OraclePredictor { oracle })?,
            "context_mean" => run(&ContextMean)?,
            "knn" => run(&KnnBaseline { k: None })?,
            other => return Err(PyValueError::new_err(format!("unknown predictor '{other}'"))),
        }
    };
    Ok(PyReport::from(evaluation.report))
}

/// Runs the invariant suite; returns `(name, passed, message)` per check.
#[pyfunction]
fn selfcheck() -> Vec<(String, bool, String)> {
    ccgen::cli::selfcheck::run_checks(&Default::default())
        .into_iter()
        .map(|o| match o.result {
            Ok(()) => (o.name.to_string(), true, String::new()),
            Err(m) => (o.name.to_string(), false, m),
        })
        .collect()
}

#[pymodule]
fn ccgen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PyDgp>()?;
    m.add_class::<PyToyModel>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(sample_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(realize_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_bin_mass, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_loss, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_mean, m)?)?;
    m.add_function(wrap_pyfunction!(crps_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mise, m)?)?;
    m.add_function(wrap_pyfunction!(dpe, m)?)?;
    m.add_function(wrap_pyfunction!(kfold_split, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(selfcheck, m)?)?;
    Ok(())
}

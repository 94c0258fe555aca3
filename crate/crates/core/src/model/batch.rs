//! Turning observations into standardized model tokens.

use ndarray::{s, Array2};

use super::svd::reduce_dims_svd;
use super::ToyModelConfig;
use crate::error::{Error, Result};
use crate::eval::Observations;
use crate::ppd::{gaussian_bin_mass, BinGrid, HistogramDistribution, Standardizer};
use crate::prior::covariates::ColumnScaler;

/// Standardized inputs: covariates padded to `max_features` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub context_x: Array2<f64>,
    pub context_t: Vec<f64>,
    pub context_y: Vec<f64>,
    pub query_x: Array2<f64>,
    pub query_t: Vec<f64>,
}

impl TokenBatch {
    pub fn context_len(&self) -> usize {
        self.context_t.len()
    }

    pub fn query_len(&self) -> usize {
        self.query_t.len()
    }

    pub fn features(&self) -> usize {
        self.context_x.ncols()
    }
}

/// Per-query supervision in standardized outcome units.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Histogram(Vec<HistogramDistribution>),
    /// Realized values for the CRPS loss.
    Points(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Histogram(v) => v.len(),
            Targets::Points(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub tokens: TokenBatch,
    pub y_scaler: Standardizer,
}

fn scale_and_pad(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), width));
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    out
}

/// Standardizes everything with context statistics only, reduces wide
/// covariate tables by SVD and zero-pads to `max_features`.
pub fn prepare_batch(
    config: &ToyModelConfig,
    context: &Observations,
    query_x: &Array2<f64>,
    query_t: &[f64],
) -> Result<PreparedBatch> {
    if query_x.nrows() != query_t.len() {
        return Err(Error::DimensionMismatch("query rows".into()));
    }
    if query_x.ncols() != context.covariates.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "query has {} covariates, context {}",
            query_x.ncols(),
            context.covariates.ncols()
        )));
    }
    let y_scaler = Standardizer::fit(&context.y)?;
    let xs = ColumnScaler::fit(&context.covariates);
    let scale = |x: &Array2<f64>| Array2::from_shape_fn(x.dim(), |(i, j)| xs.scale(j, x[(i, j)]));
    let (cx, qx) = reduce_dims_svd(&scale(&context.covariates), &scale(query_x), config.max_features);
    let t_mean = crate::stats::mean(&context.t);
    let t_std = match crate::stats::pop_std(&context.t) {
        s if s > 1e-12 => s,
        _ => 1.0,
    };
    let t_scale = |t: &[f64]| t.iter().map(|v| (v - t_mean) / t_std).collect::<Vec<_>>();
    Ok(PreparedBatch {
        tokens: TokenBatch {
            context_x: scale_and_pad(&cx, config.max_features),
            context_t: t_scale(&context.t),
            context_y: context.y.iter().map(|&v| y_scaler.apply(v)).collect(),
            query_x: scale_and_pad(&qx, config.max_features),
            query_t: t_scale(query_t),
        },
        y_scaler,
    })
}

/// Binned Gaussian targets around standardized true outcomes.
pub fn histogram_targets(values: &[f64], y_scaler: &Standardizer, grid: &BinGrid, sigma: f64) -> Targets {
    Targets::Histogram(values.iter().map(|&v| gaussian_bin_mass(y_scaler.apply(v), sigma, grid)).collect())
}

pub fn point_targets(values: &[f64], y_scaler: &Standardizer) -> Targets {
    Targets::Points(values.iter().map(|&v| y_scaler.apply(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_statistics_only() {
        let ctx = Observations::new(
            Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap(),
            vec![0.0, 0.5, 1.0],
            vec![10.0, 20.0, 30.0],
        )
        .unwrap();
        let qx = Array2::from_shape_vec((1, 1), vec![100.0]).unwrap();
        let b = prepare_batch(&ToyModelConfig::tiny(), &ctx, &qx, &[0.5]).unwrap();
        assert_eq!(b.y_scaler.mean, 20.0);
        assert_eq!(b.tokens.query_t, vec![0.0]);
        assert_eq!(b.tokens.context_x.ncols(), 4);
        assert_eq!(b.tokens.context_x[(0, 1)], 0.0);
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((b.tokens.query_x[(0, 0)] - 98.0 / sd).abs() < 1e-9);
    }
}

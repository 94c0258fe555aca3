//! Curve prediction with a trained model.

use ndarray::{Array2, Axis};

use super::batch::prepare_batch;
use super::network::predict_probs;
use super::ToyModel;
use crate::error::{Error, Result};
use crate::eval::{CurvePredictor, Observations, QuerySet};
use crate::ppd::{histogram_mean, HistogramDistribution};

impl ToyModel {
    /// Predicted outcome (PPD mean, original units) for each `(x_i, t_i)`.
    pub fn predict_points(&self, context: &Observations, x: &Array2<f64>, t: &[f64]) -> Result<Vec<f64>> {
        let prepared = prepare_batch(&self.config, context, x, t)?;
        let probs = predict_probs(self, &prepared.tokens)?;
        let grid = self.config.grid();
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                let q = HistogramDistribution { probs: row.to_vec() };
                prepared.y_scaler.invert(histogram_mean(&q, &grid))
            })
            .collect())
    }

    /// Treatment-response curve of one individual over `grid`, in one pass.
    pub fn predict_itrc(&self, context: &Observations, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        if x.len() != context.covariates.ncols() {
            return Err(Error::DimensionMismatch("query covariates".into()));
        }
        let xs = Array2::from_shape_fn((grid.len(), x.len()), |(_, j)| x[j]);
        self.predict_points(context, &xs, grid)
    }
}

impl CurvePredictor for ToyModel {
    fn name(&self) -> String {
        "toy_model".into()
    }

    fn predict_curves(&self, context: &Observations, queries: &QuerySet, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        let g = grid.len();
        let idx: Vec<usize> = (0..queries.len()).flat_map(|i| std::iter::repeat_n(i, g)).collect();
        let x = queries.covariates.select(Axis(0), &idx);
        let t: Vec<f64> = (0..queries.len()).flat_map(|_| grid.iter().copied()).collect();
        let flat = self.predict_points(context, &x, &t)?;
        Ok(flat.chunks(g.max(1)).map(|c| c.to_vec()).collect())
    }

    fn predict_points(&self, context: &Observations, queries: &QuerySet, t: &[f64]) -> Result<Vec<f64>> {
        ToyModel::predict_points(self, context, &queries.covariates, t)
    }
}

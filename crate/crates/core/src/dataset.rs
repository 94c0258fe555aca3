//! Factual/counterfactual sample tables produced by every prior.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

/// `(x_n, t_n, y_n, t'_n, mu_{t'_n}(x_n))` rows.
///
/// With more than one counterfactual draw per row, `t_cf` and `cepo_cf` hold
/// `cf_per_row` blocks of length `n`, block `j` being draw `j` for every row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub t_cf: Vec<f64>,
    pub cepo_cf: Vec<f64>,
    pub cf_per_row: usize,
    pub outcome_standardization: Option<Standardization>,
    pub treatment_standardization: Option<Standardization>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Counterfactual draw `j` as `(t', cepo)` slices of length `n`.
    pub fn counterfactual(&self, j: usize) -> (&[f64], &[f64]) {
        let n = self.n_rows();
        (&self.t_cf[j * n..(j + 1) * n], &self.cepo_cf[j * n..(j + 1) * n])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if self.t.len() != n || self.y.len() != n {
            return Err(Error::DimensionMismatch("factual columns".into()));
        }
        if self.cf_per_row == 0 || self.t_cf.len() != n * self.cf_per_row || self.cepo_cf.len() != self.t_cf.len() {
            return Err(Error::DimensionMismatch("counterfactual columns".into()));
        }
        let finite = self.covariates.iter().all(|v| v.is_finite())
            && [&self.t, &self.y, &self.t_cf, &self.cepo_cf]
                .iter()
                .all(|c| c.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFiniteGeneration("dataset"));
        }
        for &v in self.t.iter().chain(&self.t_cf) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::TreatmentOutOfRange(v));
            }
        }
        Ok(())
    }

    /// Rows in `idx`, keeping every counterfactual block aligned.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let n = self.n_rows();
        let covariates = self.covariates.select(ndarray::Axis(0), idx);
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut t_cf = Vec::with_capacity(idx.len() * self.cf_per_row);
        let mut cepo_cf = Vec::with_capacity(idx.len() * self.cf_per_row);
        for j in 0..self.cf_per_row {
            t_cf.extend(idx.iter().map(|&i| self.t_cf[j * n + i]));
            cepo_cf.extend(idx.iter().map(|&i| self.cepo_cf[j * n + i]));
        }
        Dataset {
            covariates,
            t: pick(&self.t),
            y: pick(&self.y),
            t_cf,
            cepo_cf,
            cf_per_row: self.cf_per_row,
            outcome_standardization: self.outcome_standardization,
            treatment_standardization: self.treatment_standardization,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset {
            covariates: Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64),
            t: vec![0.0, 0.5, 1.0],
            y: vec![1.0, 2.0, 3.0],
            t_cf: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            cepo_cf: vec![1.1, 1.2, 1.3, 1.4, 1.5, 1.6],
            cf_per_row: 2,
            outcome_standardization: None,
            treatment_standardization: None,
        }
    }

    #[test]
    fn select_rows_keeps_blocks_aligned() {
        let d = toy().select_rows(&[2, 0]);
        assert_eq!(d.t, vec![1.0, 0.0]);
        assert_eq!(d.t_cf, vec![0.3, 0.1, 0.6, 0.4]);
        assert_eq!(d.counterfactual(1).1, &[1.6, 1.4]);
        d.validate().unwrap();
    }

    #[test]
    fn out_of_range_treatment_rejected() {
        let mut d = toy();
        d.t[1] = 1.2;
        assert!(matches!(d.validate(), Err(Error::TreatmentOutOfRange(_))));
    }
}

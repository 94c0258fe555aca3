//! Hyperparameter distributions of the 3-MLP prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{log_uniform, truncated_normal};

pub const TRAINING_SAMPLES: usize = 2048;
pub const MAX_COVARIATES: usize = 98;
pub const MIN_LAYERS: usize = 3;
pub const MIN_WIDTH: usize = 4;

/// Depth, width and edge density of one mechanism MLP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismShape {
    pub layers: usize,
    pub width: usize,
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorHyperparams {
    pub n_samples: usize,
    pub n_covariates: usize,
    pub x: MechanismShape,
    pub t: MechanismShape,
    pub y: MechanismShape,
    /// Share of covariates that drive both treatment and outcome.
    pub confounding: f64,
    pub noise_scale: f64,
}

/// Integer from a normal with mean = variance = alpha, alpha ~ LogUniform(a, b),
/// truncated below at `lower` and rounded.
fn truncated_count<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64, lower: usize) -> usize {
    let alpha = log_uniform(rng, a, b);
    let v = truncated_normal(rng, alpha, alpha, lower as f64);
    (v.round() as usize).max(lower)
}

fn sample_shape<R: Rng + ?Sized>(rng: &mut R) -> MechanismShape {
    let layers = truncated_count(rng, 1.0, 10.0, MIN_LAYERS);
    let width = truncated_count(rng, 10.0, 100.0, MIN_WIDTH);
    let density = rng.random_range(0.1..=1.0);
    MechanismShape { layers, width, density }
}

pub fn sample_prior_hyperparams<R: Rng + ?Sized>(rng: &mut R) -> PriorHyperparams {
    sample_prior_hyperparams_with(rng, TRAINING_SAMPLES, MAX_COVARIATES)
}

/// Same distributions with an overridden row count and covariate cap.
pub fn sample_prior_hyperparams_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_samples: usize,
    max_covariates: usize,
) -> PriorHyperparams {
    let x = sample_shape(rng);
    let t = sample_shape(rng);
    let y = sample_shape(rng);
    let confounding = rng.random_range(0.0..=1.0);
    let alpha = log_uniform(rng, 1e-4, 0.5);
    let noise_scale = truncated_normal(rng, alpha, alpha, f64::MIN_POSITIVE);
    // Covariates are picked among the computed nodes of the covariate MLP.
    let cap = max_covariates.min(x.layers * x.width).max(2);
    let n_covariates = rng.random_range(2..=cap);
    PriorHyperparams {
        n_samples,
        n_covariates,
        x,
        t,
        y,
        confounding,
        noise_scale,
    }
}

impl PriorHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, s) in [("x", &self.x), ("t", &self.t), ("y", &self.y)] {
            if s.layers < MIN_LAYERS {
                return Err(format!("{name}: layers {} < {MIN_LAYERS}", s.layers));
            }
            if s.width < MIN_WIDTH {
                return Err(format!("{name}: width {} < {MIN_WIDTH}", s.width));
            }
            if !(0.1..=1.0).contains(&s.density) {
                return Err(format!("{name}: density {} outside [0.1, 1]", s.density));
            }
        }
        if !(0.0..=1.0).contains(&self.confounding) {
            return Err(format!("confounding {} outside [0, 1]", self.confounding));
        }
        if self.n_covariates < 1 || self.n_covariates > MAX_COVARIATES {
            return Err(format!("covariate count {} outside [1, {MAX_COVARIATES}]", self.n_covariates));
        }
        if self.n_covariates > self.x.layers * self.x.width {
            return Err("more covariates than covariate-MLP nodes".into());
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(format!("noise scale {} not positive", self.noise_scale));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn sampled_hyperparams_satisfy_bounds() {
        for seed in 0..500 {
            let mut rng = stream(seed, "hp", 0);
            let hp = sample_prior_hyperparams(&mut rng);
            assert_eq!(hp.n_samples, 2048);
            assert!(hp.x.layers >= 3 && hp.x.width >= 4);
            assert!((0.1..=1.0).contains(&hp.t.density));
            assert!(hp.n_covariates >= 2 && hp.n_covariates <= 98);
            hp.validate().unwrap();
        }
    }

    #[test]
    fn layer_counts_track_log_uniform_alpha() {
        // alpha in [1, 10] truncated at 3: mean depth lands in a narrow band.
        let mut rng = stream(9, "hp", 0);
        let depths: Vec<f64> = (0..4000).map(|_| sample_shape(&mut rng).layers as f64).collect();
        let m = crate::stats::mean(&depths);
        assert!(m > 3.5 && m < 6.5, "mean depth {m}");
    }
}

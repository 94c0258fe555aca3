//! Central finite-difference verification of analytic gradients.

use super::batch::{Targets, TokenBatch};
use super::network::{loss_and_grad, loss_only};
use super::ToyModel;
use crate::error::Result;
use crate::rng::{permutation, stream};

/// Denominator floor so that coordinates with vanishing gradients are judged
/// by absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// `(L(p + eps e_i) - L(p - eps e_i)) / (2 eps)`.
pub fn finite_difference(model: &ToyModel, batch: &TokenBatch, targets: &Targets, coord: usize, eps: f64) -> Result<f64> {
    let mut m = model.clone();
    let p0 = m.params[coord];
    m.params[coord] = p0 + eps;
    let up = loss_only(&m, batch, targets)?;
    m.params[coord] = p0 - eps;
    let down = loss_only(&m, batch, targets)?;
    Ok((up - down) / (2.0 * eps))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
}

/// Compares analytic gradients with central differences on `count` random
/// coordinates.
pub fn gradient_check(
    model: &ToyModel,
    batch: &TokenBatch,
    targets: &Targets,
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<GradCheck> {
    let (_, grad) = loss_and_grad(model, batch, targets)?;
    let mut rng = stream(seed, "gradcheck", 0);
    let coords: Vec<usize> = permutation(&mut rng, grad.len()).into_iter().take(count).collect();
    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut max_relative_error: f64 = 0.0;
    for &c in &coords {
        let fd = finite_difference(model, batch, targets, c, eps)?;
        max_relative_error = max_relative_error.max(relative_error(grad[c], fd));
        analytic.push(grad[c]);
        numeric.push(fd);
    }
    Ok(GradCheck { coords, analytic, numeric, max_relative_error })
}

/// Tiny-model batch from a 16-row prior dataset, for quick gradient checks.
pub fn tiny_check_case(seed: u64) -> Result<(ToyModel, TokenBatch, Targets)> {
    use super::train::{build_training_batch, LossKind};
    use super::ToyModelConfig;
    use crate::prior::{sample_dataset, PriorConfig};

    let config = ToyModelConfig::tiny();
    let model = ToyModel::new(config.clone(), seed)?;
    let prior = PriorConfig { n_samples: 16, ..PriorConfig::default() };
    let (_, data, _) = sample_dataset(&prior, seed)?;
    let mut rng = stream(seed, "gradcheck_batch", 0);
    // A wider target than training uses keeps several bins active.
    let (batch, targets) = build_training_batch(&config, &data, LossKind::Histogram, 1.0, &mut rng)?;
    Ok((model, batch.tokens, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_agree() {
        for seed in 0..3 {
            let (model, batch, targets) = tiny_check_case(seed).unwrap();
            let check = gradient_check(&model, &batch, &targets, 1e-5, 60, seed).unwrap();
            assert!(check.max_relative_error < 1e-4, "seed {seed}: {}", check.max_relative_error);
        }
    }
}

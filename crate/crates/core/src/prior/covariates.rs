//! Covariate generation by a noise-driven random MLP.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use super::corruption::{apply_tabular_corruption, CorruptionPhase, CorruptionPlan};
use super::mlp::{NodeAddr, RandomMlp};
use crate::error::{Error, Result};
use crate::rng::{log_uniform, standard_laplace, standard_normal};

/// Magnitude beyond which a generated value counts as numerically blown up.
pub const MAX_MAGNITUDE: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Normal,
    Laplace,
    StudentT3,
}

/// Draws an `n x width` exogenous noise block: one family per block, a random
/// shift and scale, then multiplied by `amplitude`.
pub fn layer_noise<R: Rng + ?Sized>(rng: &mut R, n: usize, width: usize, amplitude: f64) -> Array2<f64> {
    let family = match rng.random_range(0..3) {
        0 => NoiseFamily::Normal,
        1 => NoiseFamily::Laplace,
        _ => NoiseFamily::StudentT3,
    };
    let shift: f64 = rng.random_range(-1.0..=1.0);
    let scale = log_uniform(rng, 0.5, 2.0);
    let student = StudentT::new(3.0).expect("dof > 0");
    Array2::from_shape_simple_fn((n, width), || {
        let raw = match family {
            NoiseFamily::Normal => standard_normal(rng),
            NoiseFamily::Laplace => standard_laplace(rng),
            NoiseFamily::StudentT3 => student.sample(rng),
        };
        amplitude * (shift + scale * raw)
    })
}

pub(crate) fn check_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    for v in values {
        if !v.is_finite() || v.abs() > MAX_MAGNITUDE {
            return Err(Error::NonFiniteGeneration(what));
        }
    }
    Ok(())
}

/// Full layer states of a covariate pass.
pub struct CovariatePass {
    pub layers: Vec<Array2<f64>>,
    /// Exogenous noise added to each computed layer (`noise[l - 1]` for layer `l`).
    pub noise: Vec<Array2<f64>>,
}

/// Runs `z^(l) = act(W z^(l-1)) + eps^(l)` from `z^(0) = eps^(0)`, applying
/// in-pass corruption to the planned nodes as soon as their layer is computed.
/// Input noise has unit amplitude; deeper layers are scaled by `noise_scale`.
pub fn run_covariate_pass<R: Rng + ?Sized>(
    mlp: &RandomMlp,
    n: usize,
    noise_scale: f64,
    plan: &CorruptionPlan,
    rng: &mut R,
) -> Result<CovariatePass> {
    let input = layer_noise(rng, n, mlp.inputs(), 1.0);
    let mut noise = Vec::with_capacity(mlp.layer_count());
    let layers = mlp.forward_batch(&input, |l, z| {
        let eps = layer_noise(rng, n, z.ncols(), noise_scale);
        *z += &eps;
        noise.push(eps);
        for entry in plan.in_pass_for_layer(l) {
            let kind = entry.kind.expect("corrupted entry has a kind");
            let col: Vec<f64> = z.column(entry.node.index).to_vec();
            let out = apply_tabular_corruption(&col, kind, rng);
            z.column_mut(entry.node.index)
                .iter_mut()
                .zip(out)
                .for_each(|(d, s)| *d = s);
        }
    });
    for layer in &layers {
        check_finite(layer.iter().copied(), "covariate layer")?;
    }
    Ok(CovariatePass { layers, noise })
}

/// Extracts covariate columns in `nodes` order and applies post-hoc corruption.
pub fn extract_covariates<R: Rng + ?Sized>(
    pass: &CovariatePass,
    nodes: &[NodeAddr],
    plan: &CorruptionPlan,
    rng: &mut R,
) -> Array2<f64> {
    let n = pass.layers[0].nrows();
    let mut x = Array2::<f64>::zeros((n, nodes.len()));
    for (j, node) in nodes.iter().enumerate() {
        let mut col: Vec<f64> = pass.layers[node.layer].column(node.index).to_vec();
        if let Some(entry) = plan.entries.iter().find(|e| e.node == *node) {
            if entry.phase == CorruptionPhase::PostHoc {
                col = apply_tabular_corruption(&col, entry.kind.expect("kind"), rng);
            }
        }
        x.column_mut(j).iter_mut().zip(col).for_each(|(d, s)| *d = s);
    }
    x
}

/// Covariates from `mlp` in one call: forward pass, selection, post-hoc corruption.
pub fn generate_covariates<R: Rng + ?Sized>(
    mlp: &RandomMlp,
    n: usize,
    nodes: &[NodeAddr],
    noise_scale: f64,
    plan: &CorruptionPlan,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let pass = run_covariate_pass(mlp, n, noise_scale, plan, rng)?;
    let x = extract_covariates(&pass, nodes, plan, rng);
    check_finite(x.iter().copied(), "covariates")?;
    Ok(x)
}

/// Uniform sample without replacement of `k` nodes from layers `first..=last`.
pub fn sample_nodes<R: Rng + ?Sized>(
    rng: &mut R,
    dims: &[usize],
    first: usize,
    last: usize,
    k: usize,
    exclude: &[NodeAddr],
) -> Vec<NodeAddr> {
    let pool: Vec<NodeAddr> = (first..=last)
        .flat_map(|layer| (0..dims[layer]).map(move |index| NodeAddr { layer, index }))
        .filter(|n| !exclude.contains(n))
        .collect();
    let perm = crate::rng::permutation(rng, pool.len());
    perm.into_iter().take(k.min(pool.len())).map(|i| pool[i]).collect()
}

/// Per-column `(mean, std)` used to feed covariates into mechanism MLPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let c: Vec<f64> = col.to_vec();
            let s = crate::stats::pop_std(&c);
            mean.push(crate::stats::mean(&c));
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        ColumnScaler { mean, std }
    }

    #[inline]
    pub fn scale(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.std[col]
    }
}

/// Positivity transform of a heteroscedastic scale node: `|eta / sd(eta)| + floor`.
/// A constant node maps to `1 + floor`.
#[inline]
pub fn positivity_scale(eta: f64, eta_std: f64, floor: f64) -> f64 {
    if eta_std > 1e-12 {
        (eta / eta_std).abs() + floor
    } else {
        1.0 + floor
    }
}

//! Single-MLP ablation prior: covariates, treatment and outcome are all nodes
//! of one noise-driven MLP. Counterfactual outcomes intervene on the
//! treatment node and re-propagate with the row's stored exogenous noise.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corruption::{apply_tabular_corruption, CorruptionPhase, CorruptionPlan};
use super::covariates::{check_finite, layer_noise, positivity_scale, sample_nodes};
use super::hyper::{sample_prior_hyperparams_with, PriorHyperparams};
use super::mlp::{build_random_mlp, Edge, MlpShape, NodeAddr, RandomMlp};
use super::PriorConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream};
use crate::stats::{min_max, pop_std};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneMlpDgp {
    pub hyperparams: PriorHyperparams,
    pub mlp: RandomMlp,
    pub treatment_node: NodeAddr,
    pub outcome_node: NodeAddr,
    pub eta_t_node: NodeAddr,
    pub eta_y_node: NodeAddr,
    pub covariate_nodes: Vec<NodeAddr>,
    pub corruption_plan: CorruptionPlan,
    /// Layer holding the treatment node, per row, as computed in the factual pass.
    pub anchor_state: Array2<f64>,
    /// Exogenous noise of layers after the treatment layer up to the outcome layer.
    pub tail_noise: Vec<Array2<f64>>,
    pub t_minmax: (f64, f64),
    pub sigma_t_tilde: f64,
    pub sigma_mu: f64,
    pub eta_t_std: f64,
    pub eta_y_std: f64,
    pub positivity: bool,
    pub positivity_floor: f64,
    pub outcome_noise: f64,
    pub seed: u64,
    pub covariates: Array2<f64>,
    pub t: Vec<f64>,
    pub cepo_factual: Vec<f64>,
    pub treatment_noise_std: Vec<f64>,
}

fn apply_in_pass(plan: &CorruptionPlan, layer: usize, z: &mut Array2<f64>, rng: &mut impl Rng) {
    for entry in plan.in_pass_for_layer(layer) {
        let col: Vec<f64> = z.column(entry.node.index).to_vec();
        let out = apply_tabular_corruption(&col, entry.kind.expect("kind"), rng);
        z.column_mut(entry.node.index).iter_mut().zip(out).for_each(|(d, s)| *d = s);
    }
}

fn batch_layer(mlp: &RandomMlp, layer: usize, prev: &Array2<f64>) -> Array2<f64> {
    let n = prev.nrows();
    let mut z = Array2::<f64>::zeros((n, mlp.dims[layer]));
    let mut out = vec![0.0; mlp.dims[layer]];
    for r in 0..n {
        let p: Vec<f64> = prev.row(r).to_vec();
        mlp.layer_row(layer, &p, &mut out);
        z.row_mut(r).iter_mut().zip(&out).for_each(|(d, s)| *d = *s);
    }
    z
}

impl OneMlpDgp {
    pub fn sample(config: &PriorConfig, seed: u64, attempt: u64) -> Result<(OneMlpDgp, Dataset)> {
        let mut rng = stream(seed, "one_mlp", attempt);
        let mut hp = sample_prior_hyperparams_with(&mut rng, config.n_samples, config.max_covariates);
        let n = hp.n_samples;
        let (depth, width) = (hp.x.layers, hp.x.width);

        let t_layer = rng.random_range(1..depth);
        let treatment_node = NodeAddr { layer: t_layer, index: rng.random_range(0..width) };
        let protected: Vec<Edge> = (0..width)
            .map(|to| Edge { layer: t_layer + 1, from: treatment_node.index, to })
            .collect();
        let shape = MlpShape { inputs: width, width, layer_count: depth, outputs: width };
        let mlp = build_random_mlp(shape, hp.x.density, &protected, false, &mut rng);

        hp.n_covariates = hp.n_covariates.min(t_layer * width - 1).max(1);
        let covariate_nodes = sample_nodes(&mut rng, &mlp.dims, 1, t_layer, hp.n_covariates, &[treatment_node]);
        let corruption_plan = CorruptionPlan::sample(&covariate_nodes, config.corruption, &mut rng);
        let eta_t_node = sample_nodes(&mut rng, &mlp.dims, 1, t_layer, 1, &[treatment_node])[0];
        let y_layer = rng.random_range(t_layer + 1..=depth);
        let outcome_node = NodeAddr { layer: y_layer, index: rng.random_range(0..width) };
        let eta_y_node = sample_nodes(&mut rng, &mlp.dims, y_layer - 1, y_layer - 1, 1, &[treatment_node])[0];

        // Layers up to the treatment layer, with in-pass corruption.
        let mut layers = vec![layer_noise(&mut rng, n, width, 1.0)];
        for l in 1..=t_layer {
            let mut z = batch_layer(&mlp, l, &layers[l - 1]);
            z += &layer_noise(&mut rng, n, width, hp.noise_scale);
            apply_in_pass(&corruption_plan, l, &mut z, &mut rng);
            check_finite(z.iter().copied(), "single-MLP layer")?;
            layers.push(z);
        }

        let mut covariates = Array2::<f64>::zeros((n, covariate_nodes.len()));
        for (j, node) in covariate_nodes.iter().enumerate() {
            let mut col: Vec<f64> = layers[node.layer].column(node.index).to_vec();
            if let Some(e) = corruption_plan.entries.iter().find(|e| e.node == *node) {
                if e.phase == CorruptionPhase::PostHoc {
                    col = apply_tabular_corruption(&col, e.kind.expect("kind"), &mut rng);
                }
            }
            covariates.column_mut(j).iter_mut().zip(col).for_each(|(d, s)| *d = s);
        }

        let t_tilde: Vec<f64> = layers[t_layer].column(treatment_node.index).to_vec();
        let eta_t: Vec<f64> = layers[eta_t_node.layer].column(eta_t_node.index).to_vec();
        let spread = pop_std(&t_tilde);
        if !(spread > 1e-10 * (1.0 + t_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
            return Err(Error::DegenerateTreatment("constant treatment node"));
        }
        let eta_t_std = pop_std(&eta_t);
        let mut treatment_noise_std = Vec::with_capacity(n);
        let t_raw: Vec<f64> = (0..n)
            .map(|r| {
                if config.positivity {
                    let sd = spread * positivity_scale(eta_t[r], eta_t_std, config.positivity_floor);
                    treatment_noise_std.push(sd);
                    t_tilde[r] + sd * standard_normal(&mut rng)
                } else {
                    treatment_noise_std.push(0.0);
                    t_tilde[r]
                }
            })
            .collect();
        check_finite(t_raw.iter().copied(), "treatment")?;
        let (lo, hi) = min_max(&t_raw);
        if !(hi > lo) {
            return Err(Error::DegenerateTreatment("treatment range is empty"));
        }
        let t: Vec<f64> = t_raw.iter().map(|v| (v - lo) / (hi - lo)).collect();

        let tail_noise: Vec<Array2<f64>> = (t_layer + 1..=y_layer)
            .map(|_| layer_noise(&mut rng, n, width, hp.noise_scale))
            .collect();

        let mut dgp = OneMlpDgp {
            hyperparams: hp,
            mlp,
            treatment_node,
            outcome_node,
            eta_t_node,
            eta_y_node,
            covariate_nodes,
            corruption_plan,
            anchor_state: layers.swap_remove(t_layer),
            tail_noise,
            t_minmax: (lo, hi),
            sigma_t_tilde: spread,
            sigma_mu: 0.0,
            eta_t_std,
            eta_y_std: 0.0,
            positivity: config.positivity,
            positivity_floor: config.positivity_floor,
            outcome_noise: config.outcome_noise,
            seed,
            covariates,
            t,
            cepo_factual: Vec::new(),
            treatment_noise_std,
        };

        let (mu, eta_y): (Vec<f64>, Vec<f64>) = (0..n).map(|r| dgp.outcome_row(r, dgp.t[r])).unzip();
        check_finite(mu.iter().chain(&eta_y).copied(), "outcome")?;
        let sigma_mu = pop_std(&mu);
        if !(sigma_mu > 1e-10 * (1.0 + mu.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
            return Err(Error::DegenerateOutcome("constant factual CEPO"));
        }
        dgp.sigma_mu = sigma_mu;
        dgp.eta_y_std = pop_std(&eta_y);
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let sd = dgp.outcome_noise * sigma_mu * positivity_scale(eta_y[r], dgp.eta_y_std, dgp.positivity_floor);
                mu[r] + sd * standard_normal(&mut rng)
            })
            .collect();
        check_finite(y.iter().copied(), "outcome")?;
        dgp.cepo_factual = mu;

        let cf = config.counterfactuals_per_row.max(1);
        let mut t_cf = Vec::with_capacity(n * cf);
        let mut cepo_cf = Vec::with_capacity(n * cf);
        for _ in 0..cf {
            for row in 0..n {
                let tc: f64 = rng.random::<f64>();
                t_cf.push(tc);
                cepo_cf.push(dgp.outcome_row(row, tc).0);
            }
        }
        check_finite(cepo_cf.iter().copied(), "counterfactual outcomes")?;
        let dataset = Dataset {
            covariates: dgp.covariates.clone(),
            t: dgp.t.clone(),
            y,
            t_cf,
            cepo_cf,
            cf_per_row: cf,
            outcome_standardization: None,
            treatment_standardization: None,
        };
        dataset.validate()?;
        Ok((dgp, dataset))
    }

    pub fn n_rows(&self) -> usize {
        self.covariates.nrows()
    }

    /// `(mu_t(x), eta_Y)` under `do(T = t)` for one row.
    pub fn outcome_row(&self, row: usize, t: f64) -> (f64, f64) {
        let (lo, hi) = self.t_minmax;
        let mut state: Vec<f64> = self.anchor_state.row(row).to_vec();
        state[self.treatment_node.index] = lo + t * (hi - lo);
        let mut eta = if self.eta_y_node.layer == self.treatment_node.layer {
            Some(state[self.eta_y_node.index])
        } else {
            None
        };
        let mut out = vec![0.0; state.len()];
        for (i, l) in (self.treatment_node.layer + 1..=self.outcome_node.layer).enumerate() {
            self.mlp.layer_row(l, &state, &mut out);
            for (o, e) in out.iter_mut().zip(self.tail_noise[i].row(row)) {
                *o += e;
            }
            std::mem::swap(&mut state, &mut out);
            if l == self.eta_y_node.layer {
                eta = Some(state[self.eta_y_node.index]);
            }
        }
        (state[self.outcome_node.index], eta.expect("eta node precedes outcome"))
    }

    pub fn query_cepo(&self, row: usize, t: f64) -> Result<f64> {
        if row >= self.n_rows() {
            return Err(Error::RowOutOfRange { row, rows: self.n_rows() });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TreatmentOutOfRange(t));
        }
        Ok(self.outcome_row(row, t).0)
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, row: usize, t: f64, rng: &mut R) -> Result<f64> {
        let _ = self.query_cepo(row, t)?;
        let (mu, eta) = self.outcome_row(row, t);
        let sd = self.outcome_noise * self.sigma_mu * positivity_scale(eta, self.eta_y_std, self.positivity_floor);
        Ok(mu + sd * standard_normal(rng))
    }

    pub fn treatment_noise_floor(&self) -> f64 {
        self.sigma_t_tilde * self.positivity_floor
    }

    pub fn treatment_edges_kept(&self) -> bool {
        self.mlp.masks[self.treatment_node.layer].column(self.treatment_node.index).iter().all(|k| *k)
    }
}

//! The 3-MLP structural causal model: one MLP for covariates, one for the
//! treatment, one for the outcome.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corruption::CorruptionPlan;
use super::covariates::{
    check_finite, generate_covariates, positivity_scale, sample_nodes, ColumnScaler,
};
use super::hyper::{sample_prior_hyperparams_with, PriorHyperparams};
use super::mlp::{build_random_mlp, Edge, MlpShape, NodeAddr, RandomMlp};
use super::PriorConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{permutation, standard_normal, stream};
use crate::stats::{min_max, pop_std};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSplit {
    pub conf_indices: Vec<usize>,
    pub t_only_indices: Vec<usize>,
    pub y_only_indices: Vec<usize>,
}

impl CovariateSplit {
    /// Columns read by the treatment mechanism, ascending.
    pub fn treatment_inputs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.conf_indices.iter().chain(&self.t_only_indices).copied().collect();
        v.sort_unstable();
        v
    }

    /// Covariate columns read by the outcome mechanism, ascending.
    pub fn outcome_inputs(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.conf_indices.iter().chain(&self.y_only_indices).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn is_partition_of(&self, k: usize) -> bool {
        let mut all: Vec<usize> = self
            .conf_indices
            .iter()
            .chain(&self.t_only_indices)
            .chain(&self.y_only_indices)
            .copied()
            .collect();
        all.sort_unstable();
        all == (0..k).collect::<Vec<_>>()
    }
}

/// `round(rho * k)` confounders; the rest go to treatment-only or
/// outcome-only by fair coin. If either mechanism would read no covariate,
/// one index is moved into the confounders.
pub fn assign_covariate_roles<R: Rng + ?Sized>(k: usize, rho: f64, rng: &mut R) -> CovariateSplit {
    assert!(k >= 2, "need at least two covariates");
    let n_conf = ((rho.clamp(0.0, 1.0) * k as f64).round() as usize).min(k);
    let perm = permutation(rng, k);
    let mut conf: Vec<usize> = perm[..n_conf].to_vec();
    let mut t_only = Vec::new();
    let mut y_only = Vec::new();
    for &i in &perm[n_conf..] {
        if rng.random::<bool>() {
            t_only.push(i);
        } else {
            y_only.push(i);
        }
    }
    if conf.is_empty() && (t_only.is_empty() || y_only.is_empty()) {
        let donor = if t_only.is_empty() { &mut y_only } else { &mut t_only };
        conf.push(donor.pop().expect("k >= 2 leaves a donor"));
    }
    conf.sort_unstable();
    t_only.sort_unstable();
    y_only.sort_unstable();
    CovariateSplit { conf_indices: conf, t_only_indices: t_only, y_only_indices: y_only }
}

/// A sampled 3-MLP data-generating process together with the covariates it
/// generated, so that counterfactual outcomes can be queried per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    pub hyperparams: PriorHyperparams,
    pub mlp_x: RandomMlp,
    pub mlp_t: RandomMlp,
    pub mlp_y: RandomMlp,
    pub split: CovariateSplit,
    pub covariate_nodes: Vec<NodeAddr>,
    pub corruption_plan: CorruptionPlan,
    pub eta_t_node: NodeAddr,
    pub eta_y_node: NodeAddr,
    pub input_scaler: ColumnScaler,
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
    /// Scaled factual treatments.
    pub t: Vec<f64>,
    pub cepo_factual: Vec<f64>,
    /// Conditional std of the raw treatment per row (zero with positivity off).
    pub treatment_noise_std: Vec<f64>,
}

fn degenerate_spread(values: &[f64]) -> bool {
    let sd = pop_std(values);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    !(sd > 1e-10 * (1.0 + scale))
}

impl Dgp {
    /// One draw from the prior with stream `(seed, attempt)`; degenerate draws
    /// surface as errors for the caller to resample.
    pub fn sample(config: &PriorConfig, seed: u64, attempt: u64) -> Result<(Dgp, Dataset)> {
        let mut rng = stream(seed, "three_mlp", attempt);
        let hp = sample_prior_hyperparams_with(&mut rng, config.n_samples, config.max_covariates);
        let n = hp.n_samples;
        let k = hp.n_covariates;

        let x_shape = MlpShape { inputs: hp.x.width, width: hp.x.width, layer_count: hp.x.layers, outputs: hp.x.width };
        let mlp_x = build_random_mlp(x_shape, hp.x.density, &[], false, &mut rng);
        let covariate_nodes = sample_nodes(&mut rng, &mlp_x.dims, 1, hp.x.layers, k, &[]);
        let corruption_plan = CorruptionPlan::sample(&covariate_nodes, config.corruption, &mut rng);
        let covariates = generate_covariates(&mlp_x, n, &covariate_nodes, hp.noise_scale, &corruption_plan, &mut rng)?;
        let split = assign_covariate_roles(k, hp.confounding, &mut rng);
        let input_scaler = ColumnScaler::fit(&covariates);

        let t_inputs = split.treatment_inputs().len();
        let t_shape = MlpShape { inputs: t_inputs, width: hp.t.width, layer_count: hp.t.layers, outputs: 1 };
        let mlp_t = build_random_mlp(t_shape, hp.t.density, &[], true, &mut rng);

        let y_inputs = split.outcome_inputs().len() + 1;
        let protected: Vec<Edge> = (0..hp.y.width)
            .map(|to| Edge { layer: 1, from: y_inputs - 1, to })
            .collect();
        let y_shape = MlpShape { inputs: y_inputs, width: hp.y.width, layer_count: hp.y.layers, outputs: 1 };
        let mlp_y = build_random_mlp(y_shape, hp.y.density, &protected, true, &mut rng);

        let t_hidden = mlp_t.hidden_nodes();
        let eta_t_node = t_hidden[rng.random_range(0..t_hidden.len())];
        let y_hidden = mlp_y.hidden_nodes();
        let eta_y_node = y_hidden[rng.random_range(0..y_hidden.len())];

        let mut dgp = Dgp {
            hyperparams: hp,
            mlp_x,
            mlp_t,
            mlp_y,
            split,
            covariate_nodes,
            corruption_plan,
            eta_t_node,
            eta_y_node,
            input_scaler,
            t_minmax: (0.0, 1.0),
            sigma_t_tilde: 0.0,
            sigma_mu: 0.0,
            eta_t_std: 0.0,
            eta_y_std: 0.0,
            positivity: config.positivity,
            positivity_floor: config.positivity_floor,
            outcome_noise: config.outcome_noise,
            seed,
            covariates,
            t: Vec::new(),
            cepo_factual: Vec::new(),
            treatment_noise_std: Vec::new(),
        };
        dgp.generate_treatment(&mut rng)?;
        let y = dgp.generate_outcome_factual(&mut rng)?;

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

    fn treatment_input_row(&self, row: usize) -> Vec<f64> {
        self.split
            .treatment_inputs()
            .into_iter()
            .map(|c| self.input_scaler.scale(c, self.covariates[(row, c)]))
            .collect()
    }

    fn outcome_input_row(&self, row: usize, t: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .split
            .outcome_inputs()
            .into_iter()
            .map(|c| self.input_scaler.scale(c, self.covariates[(row, c)]))
            .collect();
        v.push(t);
        v
    }

    /// `(T_tilde, eta_T)` for one row.
    pub fn treatment_row(&self, row: usize) -> (f64, f64) {
        let layers = self.mlp_t.forward_row(&self.treatment_input_row(row));
        let out = layers.last().expect("output layer")[0];
        (out, layers[self.eta_t_node.layer][self.eta_t_node.index])
    }

    /// `(mu_t(x), eta_Y)` for one row, noise free.
    pub fn outcome_row(&self, row: usize, t: f64) -> (f64, f64) {
        let layers = self.mlp_y.forward_row(&self.outcome_input_row(row, t));
        let out = layers.last().expect("output layer")[0];
        (out, layers[self.eta_y_node.layer][self.eta_y_node.index])
    }

    /// `T = T_tilde + sd(T_tilde) * scale(eta_T) * eps`, then min-max scaling.
    fn generate_treatment<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let n = self.n_rows();
        let (t_tilde, eta): (Vec<f64>, Vec<f64>) = (0..n).map(|r| self.treatment_row(r)).unzip();
        check_finite(t_tilde.iter().chain(&eta).copied(), "treatment")?;
        if degenerate_spread(&t_tilde) {
            return Err(Error::DegenerateTreatment("constant expected treatment"));
        }
        self.sigma_t_tilde = pop_std(&t_tilde);
        self.eta_t_std = pop_std(&eta);
        let mut t_raw = Vec::with_capacity(n);
        self.treatment_noise_std = Vec::with_capacity(n);
        for r in 0..n {
            if self.positivity {
                let sd = self.sigma_t_tilde * positivity_scale(eta[r], self.eta_t_std, self.positivity_floor);
                self.treatment_noise_std.push(sd);
                t_raw.push(t_tilde[r] + sd * standard_normal(rng));
            } else {
                self.treatment_noise_std.push(0.0);
                t_raw.push(t_tilde[r]);
            }
        }
        check_finite(t_raw.iter().copied(), "treatment")?;
        let (lo, hi) = min_max(&t_raw);
        if !(hi > lo) {
            return Err(Error::DegenerateTreatment("treatment range is empty"));
        }
        self.t_minmax = (lo, hi);
        self.t = t_raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
        Ok(())
    }

    /// Factual outcomes `Y = mu_T(X) + sd(mu) * scale(eta_Y) * eps`.
    fn generate_outcome_factual<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let n = self.n_rows();
        let (mu, eta): (Vec<f64>, Vec<f64>) = (0..n).map(|r| self.outcome_row(r, self.t[r])).unzip();
        check_finite(mu.iter().chain(&eta).copied(), "outcome")?;
        if degenerate_spread(&mu) {
            return Err(Error::DegenerateOutcome("constant factual CEPO"));
        }
        self.sigma_mu = pop_std(&mu);
        self.eta_y_std = pop_std(&eta);
        let y: Vec<f64> = (0..n)
            .map(|r| {
                let sd = self.outcome_noise * self.sigma_mu * positivity_scale(eta[r], self.eta_y_std, self.positivity_floor);
                mu[r] + sd * standard_normal(rng)
            })
            .collect();
        check_finite(y.iter().copied(), "outcome")?;
        self.cepo_factual = mu;
        Ok(y)
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

    /// Noise-free curve over a treatment grid.
    pub fn cepo_curve(&self, row: usize, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.query_cepo(row, t)).collect()
    }

    /// Fresh factual-style outcome draw at `(row, t)`.
    pub fn sample_outcome<R: Rng + ?Sized>(&self, row: usize, t: f64, rng: &mut R) -> Result<f64> {
        let _ = self.query_cepo(row, t)?;
        let (mu, eta) = self.outcome_row(row, t);
        let sd = self.outcome_noise * self.sigma_mu * positivity_scale(eta, self.eta_y_std, self.positivity_floor);
        Ok(mu + sd * standard_normal(rng))
    }

    /// Raw-unit treatment noise floor `sd(T_tilde) * floor`.
    pub fn treatment_noise_floor(&self) -> f64 {
        self.sigma_t_tilde * self.positivity_floor
    }

    /// Checks that the treatment MLP is wired only to confounders and
    /// treatment-only covariates, and the outcome MLP only to confounders,
    /// outcome-only covariates and the treatment.
    pub fn check_unconfounded_wiring(&self) -> bool {
        let t_cols = self.split.treatment_inputs();
        let y_cols = self.split.outcome_inputs();
        t_cols.iter().all(|c| !self.split.y_only_indices.contains(c))
            && y_cols.iter().all(|c| !self.split.t_only_indices.contains(c))
            && self.mlp_t.inputs() == t_cols.len()
            && self.mlp_y.inputs() == y_cols.len() + 1
    }

    /// Every first-layer edge leaving the treatment input of the outcome MLP is kept.
    pub fn treatment_edges_kept(&self) -> bool {
        let t_col = self.mlp_y.inputs() - 1;
        self.mlp_y.masks[0].column(t_col).iter().all(|k| *k)
    }
}

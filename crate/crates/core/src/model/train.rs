//! Training on freshly sampled prior datasets.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{histogram_targets, point_targets, prepare_batch, PreparedBatch, Targets};
use super::network::loss_and_grad;
use super::{ToyModel, ToyModelConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::Observations;
use crate::prior::{sample_dataset, PriorConfig};
use crate::rng::{child_seed, permutation, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Histogram,
    Crps,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "histogram" => Ok(LossKind::Histogram),
            "crps" => Ok(LossKind::Crps),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ToyModelConfig,
    pub prior: PriorConfig,
    pub steps: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    /// Width of the Gaussian histogram target in standardized units.
    pub target_std: f64,
    /// Fresh datasets to try when one fails before giving up on a step.
    pub max_resamples: usize,
    /// Prior datasets whose gradients are averaged into one update.
    pub datasets_per_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ToyModelConfig::toy(),
            prior: PriorConfig { n_samples: 256, ..PriorConfig::default() },
            steps: 2000,
            seed: 0,
            learning_rate: 1e-3,
            momentum: 0.9,
            clip_norm: 1.0,
            loss: LossKind::Histogram,
            optimizer: OptimizerKind::SgdMomentum,
            target_std: crate::ppd::DEFAULT_TARGET_STD,
            max_resamples: 8,
            datasets_per_step: 1,
        }
    }
}

/// Context of `m` factual rows, queries at the remaining rows' counterfactual
/// treatments with targets built from their true conditional outcomes.
pub fn build_training_batch<R: Rng + ?Sized>(
    model: &ToyModelConfig,
    data: &Dataset,
    loss: LossKind,
    target_std: f64,
    rng: &mut R,
) -> Result<(PreparedBatch, Targets)> {
    let n = data.n_rows();
    if n < 4 {
        return Err(Error::InvalidArgument(format!("{n} rows are too few for a context/query split")));
    }
    let perm = permutation(rng, n);
    let m = rng.random_range(n / 4..=3 * n / 4).clamp(2, n - 1);
    let (ctx_rows, qry_rows) = perm.split_at(m);
    let obs = Observations::from_dataset(data);
    let context = obs.select_rows(ctx_rows);
    let (t_cf, cepo_cf) = data.counterfactual(0);
    let query_x = data.covariates.select(ndarray::Axis(0), qry_rows);
    let query_t: Vec<f64> = qry_rows.iter().map(|&i| t_cf[i]).collect();
    let truth: Vec<f64> = qry_rows.iter().map(|&i| cepo_cf[i]).collect();
    let prepared = prepare_batch(model, &context, &query_x, &query_t)?;
    let targets = match loss {
        LossKind::Histogram => histogram_targets(&truth, &prepared.y_scaler, &model.grid(), target_std),
        LossKind::Crps => point_targets(&truth, &prepared.y_scaler),
    };
    Ok((prepared, targets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub dgp_seed: u64,
    pub resamples: usize,
}

pub fn loss_log_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("step,loss,dgp_seed,resamples\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.loss, r.dgp_seed, r.resamples);
    }
    s
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: ToyModel,
    pub config: TrainConfig,
    velocity: Vec<f64>,
    second_moment: Vec<f64>,
    updates: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let model = ToyModel::new(config.model.clone(), child_seed(config.seed, "init", 0))?;
        Ok(Self::with_model(model, config))
    }

    pub fn with_model(model: ToyModel, config: TrainConfig) -> Self {
        let n = model.param_count();
        Trainer { model, config, velocity: vec![0.0; n], second_moment: vec![0.0; n], updates: 0 }
    }

    /// Clips `grad` to the configured norm and takes one optimizer step.
    pub fn apply_gradient(&mut self, mut grad: Vec<f64>) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > self.config.clip_norm {
            let s = self.config.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.updates += 1;
        let lr = self.config.learning_rate;
        match self.config.optimizer {
            OptimizerKind::SgdMomentum => {
                let mu = self.config.momentum;
                for ((p, v), g) in self.model.params.iter_mut().zip(&mut self.velocity).zip(&grad) {
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let c1 = 1.0 - b1.powi(self.updates as i32);
                let c2 = 1.0 - b2.powi(self.updates as i32);
                for (((p, m), v), g) in self
                    .model
                    .params
                    .iter_mut()
                    .zip(&mut self.velocity)
                    .zip(&mut self.second_moment)
                    .zip(&grad)
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }

    /// One update on a fixed batch; returns the pre-update loss.
    pub fn step_on_batch(&mut self, batch: &PreparedBatch, targets: &Targets) -> Result<f64> {
        let (loss, grad) = loss_and_grad(&self.model, &batch.tokens, targets)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        self.apply_gradient(grad);
        Ok(loss)
    }

    /// Loss and gradient on dataset `slot` of step `step`. Failed draws
    /// (exhausted prior, non-finite loss) are replaced by fresh ones.
    fn dataset_gradient(&self, step: usize, slot: usize) -> Result<(f64, Vec<f64>, u64, usize)> {
        let cfg = &self.config;
        let mut last = None;
        for attempt in 0..=cfg.max_resamples {
            let index = ((step as u64) << 24) | ((slot as u64) << 8) | attempt as u64;
            let dgp_seed = child_seed(cfg.seed, "train_dgp", index);
            let data = match sample_dataset(&cfg.prior, dgp_seed) {
                Ok((_, data, _)) => data,
                Err(e @ Error::PriorExhausted { .. }) => {
                    last = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut rng = stream(dgp_seed, "train_batch", 0);
            let (batch, targets) = build_training_batch(&cfg.model, &data, cfg.loss, cfg.target_std, &mut rng)?;
            match loss_and_grad(&self.model, &batch.tokens, &targets) {
                Ok((loss, grad)) if grad.iter().all(|g| g.is_finite()) => return Ok((loss, grad, dgp_seed, attempt)),
                Ok(_) | Err(Error::NonFiniteLoss) => last = Some(Error::NonFiniteLoss),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or(Error::NonFiniteLoss))
    }

    /// Samples `datasets_per_step` datasets and takes one update on their
    /// averaged gradient.
    pub fn step(&mut self, step: usize) -> Result<StepRecord> {
        let k = self.config.datasets_per_step.max(1);
        let mut total = vec![0.0; self.model.param_count()];
        let mut loss = 0.0;
        let mut first_seed = 0;
        let mut resamples = 0;
        for slot in 0..k {
            let (l, grad, seed, tries) = self.dataset_gradient(step, slot)?;
            if slot == 0 {
                first_seed = seed;
            }
            resamples += tries;
            loss += l;
            total.iter_mut().zip(&grad).for_each(|(a, g)| *a += g);
        }
        let inv = 1.0 / k as f64;
        total.iter_mut().for_each(|g| *g *= inv);
        self.apply_gradient(total);
        Ok(StepRecord { step, loss: loss * inv, dgp_seed: first_seed, resamples })
    }
}

/// Trains for `config.steps` steps, calling `on_step` after each one.
pub fn train(config: TrainConfig, mut on_step: impl FnMut(&StepRecord)) -> Result<(ToyModel, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(config)?;
    let mut log = Vec::with_capacity(trainer.config.steps);
    for step in 0..trainer.config.steps {
        let rec = trainer.step(step)?;
        on_step(&rec);
        log.push(rec);
    }
    Ok((trainer.model, log))
}

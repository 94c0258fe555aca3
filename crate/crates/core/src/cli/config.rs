//! Flat `key = value` run configuration shared by every subcommand.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, OptimumMode};
use crate::model::{LossKind, OptimizerKind, ToyModelConfig, TrainConfig};
use crate::prior::{CorruptionMode, PriorConfig, PriorKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub prior: PriorKind,
    pub corruption_mode: CorruptionMode,
    pub positivity: bool,
    pub positivity_floor: f64,
    pub outcome_noise: f64,
    pub n_samples: usize,
    pub max_covariates: usize,
    pub max_retries: usize,
    pub seed: u64,
    pub count: usize,

    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub steps: usize,
    pub train_rows: usize,
    pub datasets_per_step: usize,
    pub target_std: f64,

    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub bins: usize,
    pub max_features: usize,
    pub t_encoder_hidden: usize,
    pub z_lo: f64,
    pub z_hi: f64,

    pub grid_points: usize,
    pub folds: usize,
    pub k_neighbors: Option<usize>,
    pub optimum_mode: Option<OptimumMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let prior = PriorConfig::default();
        let train = TrainConfig::default();
        let model = ToyModelConfig::toy();
        RunConfig {
            prior: prior.prior,
            corruption_mode: prior.corruption,
            positivity: prior.positivity,
            positivity_floor: prior.positivity_floor,
            outcome_noise: prior.outcome_noise,
            n_samples: prior.n_samples,
            max_covariates: prior.max_covariates,
            max_retries: prior.max_retries,
            seed: 0,
            count: 1,
            loss: train.loss,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            clip_norm: train.clip_norm,
            steps: train.steps,
            train_rows: train.prior.n_samples,
            datasets_per_step: train.datasets_per_step,
            target_std: train.target_std,
            layers: model.layer_count,
            heads: model.head_count,
            embed_dim: model.embed_dim,
            ff_dim: model.ff_dim,
            bins: model.bin_count,
            max_features: model.max_features,
            t_encoder_hidden: model.t_encoder_hidden,
            z_lo: model.z_lo,
            z_hi: model.z_hi,
            grid_points: crate::eval::DEFAULT_GRID_POINTS,
            folds: crate::eval::DEFAULT_FOLDS,
            k_neighbors: None,
            optimum_mode: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{value}' for '{key}'")))
}

fn on_off(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("'{key}' expects on or off, got '{value}'"))),
    }
}

pub const KEYS: &[&str] = &[
    "prior",
    "corruption_mode",
    "positivity",
    "positivity_floor",
    "outcome_noise",
    "n_samples",
    "max_covariates",
    "max_retries",
    "seed",
    "count",
    "loss",
    "optimizer",
    "learning_rate",
    "momentum",
    "clip_norm",
    "steps",
    "train_rows",
    "datasets_per_step",
    "target_std",
    "layers",
    "heads",
    "embed_dim",
    "ff_dim",
    "bins",
    "max_features",
    "t_encoder_hidden",
    "z_lo",
    "z_hi",
    "grid_points",
    "folds",
    "k_neighbors",
    "optimum_mode",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "prior" => self.prior = v.parse()?,
            "corruption_mode" => {
                self.corruption_mode = match v {
                    "in_pass" => CorruptionMode::InPass,
                    "post_hoc_only" => CorruptionMode::PostHocOnly,
                    _ => return Err(Error::InvalidArgument(format!("unknown corruption mode '{v}'"))),
                }
            }
            "positivity" => self.positivity = on_off(key, v)?,
            "positivity_floor" => self.positivity_floor = parse(key, v)?,
            "outcome_noise" => self.outcome_noise = parse(key, v)?,
            "n_samples" => self.n_samples = parse(key, v)?,
            "max_covariates" => self.max_covariates = parse(key, v)?,
            "max_retries" => self.max_retries = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "count" => self.count = parse(key, v)?,
            "loss" => self.loss = v.parse()?,
            "optimizer" => self.optimizer = v.parse()?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "train_rows" => self.train_rows = parse(key, v)?,
            "datasets_per_step" => self.datasets_per_step = parse(key, v)?,
            "target_std" => self.target_std = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "ff_dim" => self.ff_dim = parse(key, v)?,
            "bins" => self.bins = parse(key, v)?,
            "max_features" => self.max_features = parse(key, v)?,
            "t_encoder_hidden" => self.t_encoder_hidden = parse(key, v)?,
            "z_lo" => self.z_lo = parse(key, v)?,
            "z_hi" => self.z_hi = parse(key, v)?,
            "grid_points" => self.grid_points = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "k_neighbors" => self.k_neighbors = if v == "auto" { None } else { Some(parse(key, v)?) },
            "optimum_mode" => self.optimum_mode = if v == "auto" { None } else { Some(v.parse()?) },
            other => return Err(Error::InvalidArgument(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` pair as given on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got '{pair}'")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig {
            prior: self.prior,
            n_samples: self.n_samples,
            max_covariates: self.max_covariates,
            corruption: self.corruption_mode,
            positivity: self.positivity,
            positivity_floor: self.positivity_floor,
            outcome_noise: self.outcome_noise,
            counterfactuals_per_row: 1,
            max_retries: self.max_retries,
        }
    }

    pub fn model_config(&self) -> ToyModelConfig {
        ToyModelConfig {
            layer_count: self.layers,
            head_count: self.heads,
            embed_dim: self.embed_dim,
            ff_dim: self.ff_dim,
            bin_count: self.bins,
            max_features: self.max_features,
            t_encoder_hidden: self.t_encoder_hidden,
            z_lo: self.z_lo,
            z_hi: self.z_hi,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model_config(),
            prior: PriorConfig { n_samples: self.train_rows, ..self.prior_config() },
            steps: self.steps,
            seed: self.seed,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            clip_norm: self.clip_norm,
            loss: self.loss,
            optimizer: self.optimizer,
            target_std: self.target_std,
            max_resamples: 8,
            datasets_per_step: self.datasets_per_step,
        }
    }

    pub fn eval_options(&self, mode: OptimumMode, keep_curves: bool) -> Result<EvalOptions> {
        if self.grid_points < 2 {
            return Err(Error::InvalidArgument("grid_points must be at least 2".into()));
        }
        Ok(EvalOptions {
            grid: crate::eval::uniform_grid(self.grid_points),
            folds: self.folds,
            seed: self.seed,
            optimum_mode: self.optimum_mode.unwrap_or(mode),
            keep_curves,
        })
    }
}

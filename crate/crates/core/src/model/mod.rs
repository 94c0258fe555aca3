//! A small set-input transformer that maps a context table and `(x, t)`
//! queries to binned outcome distributions.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the
//! slices. That keeps the optimizer, checkpointing and gradient checks
//! oblivious to the network structure.

pub mod batch;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod predict;
pub mod svd;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppd::BinGrid;
use crate::rng::{standard_normal, stream};

pub use batch::{prepare_batch, PreparedBatch, Targets, TokenBatch};
pub use network::{loss_and_grad, loss_only, predict_probs};
pub use train::{train, LossKind, OptimizerKind, TrainConfig, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layer_count: usize,
    pub head_count: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub bin_count: usize,
    pub max_features: usize,
    pub t_encoder_hidden: usize,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig::toy()
    }
}

impl ToyModelConfig {
    pub fn toy() -> Self {
        ToyModelConfig {
            layer_count: 2,
            head_count: 4,
            embed_dim: 64,
            ff_dim: 128,
            bin_count: 64,
            max_features: 100,
            t_encoder_hidden: 64,
            z_lo: -10.0,
            z_hi: 10.0,
        }
    }

    /// Smallest useful network, for gradient checks.
    pub fn tiny() -> Self {
        ToyModelConfig {
            layer_count: 1,
            head_count: 2,
            embed_dim: 8,
            ff_dim: 16,
            bin_count: 8,
            max_features: 4,
            t_encoder_hidden: 8,
            z_lo: -10.0,
            z_hi: 10.0,
        }
    }

    /// Full-size preset; defined for completeness, far too slow to train here.
    pub fn full_scale() -> Self {
        ToyModelConfig {
            layer_count: 20,
            head_count: 6,
            embed_dim: 384,
            ff_dim: 768,
            bin_count: 1024,
            max_features: 100,
            t_encoder_hidden: 384,
            z_lo: -10.0,
            z_hi: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.layer_count,
            self.head_count,
            self.embed_dim,
            self.ff_dim,
            self.bin_count,
            self.max_features,
            self.t_encoder_hidden,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument("model sizes must be positive".into()));
        }
        if self.embed_dim % self.head_count != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} is not divisible by head_count {}",
                self.embed_dim, self.head_count
            )));
        }
        BinGrid::new(self.bin_count, self.z_lo, self.z_hi)?;
        Ok(())
    }

    pub fn grid(&self) -> BinGrid {
        BinGrid::new(self.bin_count, self.z_lo, self.z_hi).expect("validated grid")
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.head_count
    }
}

/// A `rows x cols` row-major block of the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSlots {
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
    pub ff1_w: Slot,
    pub ff1_b: Slot,
    pub ff2_w: Slot,
    pub ff2_b: Slot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub t_w1: Slot,
    pub t_b1: Slot,
    pub t_w2: Slot,
    pub t_b2: Slot,
    pub lin_w: Slot,
    pub lin_b: Slot,
    pub y_w: Slot,
    pub y_b: Slot,
    pub blocks: Vec<BlockSlots>,
    pub lnf_gain: Slot,
    pub lnf_bias: Slot,
    pub head_w: Slot,
    pub head_b: Slot,
    pub named: Vec<(String, Slot)>,
    pub total: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Weight,
    Zero,
    One,
}

impl ParamLayout {
    pub fn new(c: &ToyModelConfig) -> Self {
        let mut named = Vec::new();
        let mut at = 0;
        let mut alloc = |name: String, rows: usize, cols: usize| {
            let s = Slot { offset: at, rows, cols };
            at += rows * cols;
            named.push((name, s));
            s
        };
        let e = c.embed_dim;
        let t_w1 = alloc("t_encoder.w1".into(), c.t_encoder_hidden, 1);
        let t_b1 = alloc("t_encoder.b1".into(), 1, c.t_encoder_hidden);
        let t_w2 = alloc("t_encoder.w2".into(), e, c.t_encoder_hidden);
        let t_b2 = alloc("t_encoder.b2".into(), 1, e);
        let lin_w = alloc("linear_encoder.w".into(), e, c.max_features + 1);
        let lin_b = alloc("linear_encoder.b".into(), 1, e);
        let y_w = alloc("y_encoder.w".into(), e, 1);
        let y_b = alloc("y_encoder.b".into(), 1, e);
        let blocks = (0..c.layer_count)
            .map(|l| {
                let mut a = |n: &str, r, k| alloc(format!("block{l}.{n}"), r, k);
                BlockSlots {
                    ln1_gain: a("ln1.gain", 1, e),
                    ln1_bias: a("ln1.bias", 1, e),
                    wq: a("attn.wq", e, e),
                    bq: a("attn.bq", 1, e),
                    wk: a("attn.wk", e, e),
                    bk: a("attn.bk", 1, e),
                    wv: a("attn.wv", e, e),
                    bv: a("attn.bv", 1, e),
                    wo: a("attn.wo", e, e),
                    bo: a("attn.bo", 1, e),
                    ln2_gain: a("ln2.gain", 1, e),
                    ln2_bias: a("ln2.bias", 1, e),
                    ff1_w: a("ff.w1", c.ff_dim, e),
                    ff1_b: a("ff.b1", 1, c.ff_dim),
                    ff2_w: a("ff.w2", e, c.ff_dim),
                    ff2_b: a("ff.b2", 1, e),
                }
            })
            .collect();
        let lnf_gain = alloc("final_ln.gain".into(), 1, e);
        let lnf_bias = alloc("final_ln.bias".into(), 1, e);
        let head_w = alloc("head.w".into(), c.bin_count, e);
        let head_b = alloc("head.b".into(), 1, c.bin_count);
        ParamLayout {
            t_w1,
            t_b1,
            t_w2,
            t_b2,
            lin_w,
            lin_b,
            y_w,
            y_b,
            blocks,
            lnf_gain,
            lnf_bias,
            head_w,
            head_b,
            named,
            total: at,
        }
    }

    fn init_kind(name: &str) -> Init {
        let last = name.rsplit('.').next().unwrap_or(name);
        if last == "gain" {
            Init::One
        } else if last.starts_with('b') {
            Init::Zero
        } else {
            Init::Weight
        }
    }

    pub fn slot(&self, name: &str) -> Option<Slot> {
        self.named.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub config: ToyModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

impl ToyModel {
    /// Weights `N(0, 1/fan_in)`, biases zero, layer-norm gains one.
    pub fn new(config: ToyModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = stream(seed, "model_init", 0);
        for (name, slot) in &layout.named {
            let block = &mut params[slot.range()];
            match ParamLayout::init_kind(name) {
                Init::One => block.fill(1.0),
                Init::Zero => block.fill(0.0),
                Init::Weight => {
                    let scale = 1.0 / (slot.cols as f64).sqrt();
                    block.iter_mut().for_each(|w| *w = scale * standard_normal(&mut rng));
                }
            }
        }
        Ok(ToyModel { config, layout, params })
    }

    pub fn from_params(config: ToyModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        Ok(ToyModel { config, layout, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let c = ToyModelConfig::toy();
        let layout = ParamLayout::new(&c);
        let mut at = 0;
        for (_, s) in &layout.named {
            assert_eq!(s.offset, at);
            at += s.len();
        }
        assert_eq!(at, layout.total);
    }

    #[test]
    fn init_kinds() {
        let m = ToyModel::new(ToyModelConfig::tiny(), 1).unwrap();
        let g = m.layout.slot("block0.ln1.gain").unwrap();
        assert!(m.params[g.range()].iter().all(|&v| v == 1.0));
        let b = m.layout.slot("block0.attn.bq").unwrap();
        assert!(m.params[b.range()].iter().all(|&v| v == 0.0));
        let w = m.layout.slot("t_encoder.w2").unwrap();
        assert!(m.params[w.range()].iter().any(|&v| v != 0.0));
        let w1 = m.layout.slot("t_encoder.w1").unwrap();
        assert!(m.params[w1.range()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn head_count_must_divide_embed() {
        let c = ToyModelConfig { head_count: 3, ..ToyModelConfig::tiny() };
        assert!(c.validate().is_err());
    }
}

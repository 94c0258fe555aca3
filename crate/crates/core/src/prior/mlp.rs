//! Randomly initialised sparse MLPs used as structural mechanisms.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Element-wise activation drawn per node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu,
    Sine,
    Abs,
    Softplus,
}

impl Activation {
    pub const POOL: [Activation; 6] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::LeakyRelu,
        Activation::Sine,
        Activation::Abs,
        Activation::Softplus,
    ];

    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    0.01 * v
                }
            }
            Activation::Sine => v.sin(),
            Activation::Abs => v.abs(),
            Activation::Softplus => softplus(v),
        }
    }
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Address of a node: `layer` 0 is the input layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeAddr {
    pub layer: usize,
    pub index: usize,
}

/// Edge entering `layer` (>= 1) from node `from` of the previous layer into node `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
}

/// Node counts of an MLP: `inputs`, then `layer_count` weight layers, the
/// last of which has `outputs` nodes and every other `width` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub inputs: usize,
    pub width: usize,
    pub layer_count: usize,
    pub outputs: usize,
}

impl MlpShape {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layer_count + 1);
        dims.push(self.inputs);
        for l in 1..=self.layer_count {
            dims.push(if l == self.layer_count { self.outputs } else { self.width });
        }
        dims
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMlp {
    pub dims: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1`; shape `dims[l+1] x dims[l]`.
    /// Dropped edges hold exactly zero.
    pub weights: Vec<Array2<f64>>,
    pub masks: Vec<Array2<bool>>,
    /// `activations[l]` belongs to layer `l + 1`.
    pub activations: Vec<Vec<Activation>>,
    pub weight_std: f64,
    pub protected: Vec<Edge>,
}

/// `sqrt(2 / max(width * density, 1))`.
pub fn weight_std(width: usize, density: f64) -> f64 {
    (2.0 / (width as f64 * density).max(1.0)).sqrt()
}

/// Samples weights, sparsity masks and per-node activations. When
/// `identity_output` is set the last layer is linear.
pub fn build_random_mlp<R: Rng + ?Sized>(
    shape: MlpShape,
    density: f64,
    protected: &[Edge],
    identity_output: bool,
    rng: &mut R,
) -> RandomMlp {
    assert!(shape.layer_count >= 1 && shape.width >= 1 && shape.inputs >= 1);
    assert!(density > 0.0 && density <= 1.0);
    let dims = shape.dims();
    let std = weight_std(shape.width, density);
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut weights = Vec::with_capacity(shape.layer_count);
    let mut masks = Vec::with_capacity(shape.layer_count);
    let mut activations = Vec::with_capacity(shape.layer_count);
    for l in 0..shape.layer_count {
        let (rows, cols) = (dims[l + 1], dims[l]);
        let mut w = Array2::<f64>::zeros((rows, cols));
        let mut m = Array2::<bool>::from_elem((rows, cols), false);
        for i in 0..rows {
            for j in 0..cols {
                let value = normal.sample(rng);
                let keep = rng.random::<f64>() < density;
                if keep {
                    w[(i, j)] = value;
                    m[(i, j)] = true;
                }
            }
        }
        for e in protected.iter().filter(|e| e.layer == l + 1) {
            if !m[(e.to, e.from)] {
                m[(e.to, e.from)] = true;
                w[(e.to, e.from)] = normal.sample(rng);
            }
        }
        let acts = if identity_output && l + 1 == shape.layer_count {
            vec![Activation::Identity; rows]
        } else {
            (0..rows)
                .map(|_| Activation::POOL[rng.random_range(0..Activation::POOL.len())])
                .collect()
        };
        weights.push(w);
        masks.push(m);
        activations.push(acts);
    }
    RandomMlp {
        dims,
        weights,
        masks,
        activations,
        weight_std: std,
        protected: protected.to_vec(),
    }
}

impl RandomMlp {
    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn inputs(&self) -> usize {
        self.dims[0]
    }

    pub fn outputs(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    /// Nodes strictly between input and output layers.
    pub fn hidden_nodes(&self) -> Vec<NodeAddr> {
        let last = self.dims.len() - 1;
        (1..last)
            .flat_map(|layer| (0..self.dims[layer]).map(move |index| NodeAddr { layer, index }))
            .collect()
    }

    pub fn dropped_edges(&self) -> usize {
        self.masks.iter().map(|m| m.iter().filter(|k| !**k).count()).sum()
    }

    /// Computes layer `layer` (>= 1) for one row: `act(W prev)`.
    #[inline]
    pub fn layer_row(&self, layer: usize, prev: &[f64], out: &mut [f64]) {
        let w = &self.weights[layer - 1];
        let acts = &self.activations[layer - 1];
        for (i, o) in out.iter_mut().enumerate() {
            let row = w.row(i);
            let mut s = 0.0;
            for (a, b) in row.iter().zip(prev) {
                s += a * b;
            }
            *o = acts[i].apply(s);
        }
    }

    /// Row-wise forward pass returning every layer (input included).
    pub fn forward_row(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut layers = Vec::with_capacity(self.dims.len());
        layers.push(input.to_vec());
        for l in 1..self.dims.len() {
            let mut out = vec![0.0; self.dims[l]];
            self.layer_row(l, &layers[l - 1], &mut out);
            layers.push(out);
        }
        layers
    }

    /// Batch forward pass. `hook(layer, z)` runs after each computed layer
    /// and may modify it in place (noise injection, corruption) before it
    /// feeds the next layer. Per-row arithmetic is identical to
    /// [`RandomMlp::forward_row`].
    pub fn forward_batch<F>(&self, input: &Array2<f64>, mut hook: F) -> Vec<Array2<f64>>
    where
        F: FnMut(usize, &mut Array2<f64>),
    {
        let n = input.nrows();
        let mut layers = Vec::with_capacity(self.dims.len());
        layers.push(input.clone());
        let mut prev_buf = vec![0.0; self.dims[0]];
        for l in 1..self.dims.len() {
            let mut z = Array2::<f64>::zeros((n, self.dims[l]));
            let mut out = vec![0.0; self.dims[l]];
            for r in 0..n {
                prev_buf.clear();
                prev_buf.extend(layers[l - 1].row(r).iter().copied());
                self.layer_row(l, &prev_buf, &mut out);
                z.row_mut(r).iter_mut().zip(&out).for_each(|(d, s)| *d = *s);
            }
            hook(l, &mut z);
            layers.push(z);
        }
        layers
    }
}

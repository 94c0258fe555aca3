//! Tabular corruption of covariate nodes: binarisation, quantisation and
//! zero-inflation, applied either inside the covariate forward pass or after it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::NodeAddr;
use crate::stats::{quantile_sorted, sorted_copy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CorruptionKind {
    /// Indicator of exceeding the empirical `quantile` of the column.
    Binarize { quantile: f64 },
    /// Snap to `levels` equally spaced empirical quantiles.
    Quantize { levels: usize },
    /// Each entry set to zero independently with probability `rate`.
    ZeroInflate { rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionPhase {
    None,
    InPass,
    PostHoc,
}

/// Where corruption may be applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CorruptionMode {
    #[default]
    InPass,
    PostHocOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCorruption {
    pub node: NodeAddr,
    pub phase: CorruptionPhase,
    pub kind: Option<CorruptionKind>,
}

/// One entry per covariate node, in covariate column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionPlan {
    pub entries: Vec<NodeCorruption>,
}

pub const CORRUPTED_PROB: f64 = 0.5;
pub const IN_PASS_SHARE: f64 = 0.35;

impl CorruptionPlan {
    pub fn sample<R: Rng + ?Sized>(nodes: &[NodeAddr], mode: CorruptionMode, rng: &mut R) -> Self {
        let entries = nodes
            .iter()
            .map(|&node| {
                if rng.random::<f64>() >= CORRUPTED_PROB {
                    return NodeCorruption { node, phase: CorruptionPhase::None, kind: None };
                }
                let in_pass = rng.random::<f64>() < IN_PASS_SHARE;
                let phase = match (mode, in_pass) {
                    (CorruptionMode::InPass, true) => CorruptionPhase::InPass,
                    _ => CorruptionPhase::PostHoc,
                };
                NodeCorruption { node, phase, kind: Some(sample_kind(rng)) }
            })
            .collect();
        CorruptionPlan { entries }
    }

    pub fn count(&self, phase: CorruptionPhase) -> usize {
        self.entries.iter().filter(|e| e.phase == phase).count()
    }

    pub fn in_pass_for_layer(&self, layer: usize) -> impl Iterator<Item = &NodeCorruption> {
        self.entries
            .iter()
            .filter(move |e| e.phase == CorruptionPhase::InPass && e.node.layer == layer)
    }
}

fn sample_kind<R: Rng + ?Sized>(rng: &mut R) -> CorruptionKind {
    match rng.random_range(0..3) {
        0 => CorruptionKind::Binarize { quantile: rng.random_range(0.2..=0.8) },
        1 => CorruptionKind::Quantize { levels: rng.random_range(2..=10) },
        _ => CorruptionKind::ZeroInflate { rate: rng.random_range(0.1..=0.5) },
    }
}

pub fn apply_tabular_corruption<R: Rng + ?Sized>(
    column: &[f64],
    kind: CorruptionKind,
    rng: &mut R,
) -> Vec<f64> {
    match kind {
        CorruptionKind::Binarize { quantile } => {
            if column.is_empty() {
                return Vec::new();
            }
            let threshold = quantile_sorted(&sorted_copy(column), quantile);
            column.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect()
        }
        CorruptionKind::Quantize { levels } => {
            if column.is_empty() {
                return Vec::new();
            }
            let sorted = sorted_copy(column);
            let q = levels.max(2);
            let grid: Vec<f64> = (0..q)
                .map(|i| quantile_sorted(&sorted, i as f64 / (q - 1) as f64))
                .collect();
            column.iter().map(|&v| nearest(&grid, v)).collect()
        }
        CorruptionKind::ZeroInflate { rate } => column
            .iter()
            .map(|&v| if rng.random::<f64>() < rate { 0.0 } else { v })
            .collect(),
    }
}

/// Nearest level in an ascending grid; ties go to the lower level.
fn nearest(grid: &[f64], v: f64) -> f64 {
    let mut best = grid[0];
    let mut best_d = (v - best).abs();
    for &g in &grid[1..] {
        let d = (v - g).abs();
        if d < best_d {
            best = g;
            best_d = d;
        }
    }
    best
}

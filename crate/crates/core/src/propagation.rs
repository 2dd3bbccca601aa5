//! Intersection-aware propagation from an already-segmented neighbor frame.
//!
//! `S_t = exp(-(phi_S(F_t) - phi_S(F_n))^2)` marks cells whose appearance is
//! unchanged since the neighbor. The neighbor's label signal `y_n` is mixed
//! with `phi_Y(F_n)` into `Y_n`, and `[S_t, Y_n]` is mixed into the
//! overlapped object feature `H_t`. Both mixers are per-cell affine maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::EngineConfig;
use crate::error::{mismatch, Result};
use crate::features::FeatureTransform;
use crate::grid::FeatureGrid;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, seeded_matrix};

/// Which neighbor a target frame reads, and its per-object label signal on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborContext {
    pub neighbor_index: usize,
    /// Per-object probability of the neighbor, one grid vector per object.
    pub label_signal: Vec<Vec<f64>>,
}

/// `exp(-(a - b)^2)` entry-wise on already-transformed features.
pub fn similarity_from_embeddings(target: &FeatureGrid, neighbor: &FeatureGrid) -> Result<FeatureGrid> {
    target.check_same(neighbor, "neighbor_similarity")?;
    let data: Vec<f64> = target
        .data
        .as_slice()
        .iter()
        .zip(neighbor.data.as_slice())
        .map(|(a, b)| libm::exp(-(a - b) * (a - b)))
        .collect();
    FeatureGrid::new(target.shape, Matrix::from_vec(target.data.rows(), target.channels(), data)?)
}

pub fn neighbor_similarity(f_target: &FeatureGrid, f_neighbor: &FeatureGrid, phi_s: &FeatureTransform) -> Result<FeatureGrid> {
    f_target.check_same(f_neighbor, "neighbor_similarity")?;
    similarity_from_embeddings(&phi_s.apply(f_target)?, &phi_s.apply(f_neighbor)?)
}

/// The two seeded per-cell mixers: `W_y: (c2 + 1) -> c3` and `W_h: (c2 + c3) -> c3`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMixers {
    pub label_weight: Matrix,
    pub label_bias: Vec<f64>,
    pub overlap_weight: Matrix,
    pub overlap_bias: Vec<f64>,
}

impl NeighborMixers {
    pub fn seeded(config: &EngineConfig) -> Self {
        let (c2, c3) = (config.c2, config.c3);
        Self {
            label_weight: seeded_matrix(c2 + 1, c3, derive_seed(config.rng_seed, "neighbor_mixer")),
            label_bias: vec![0.0; c3],
            overlap_weight: seeded_matrix(c2 + c3, c3, derive_seed(config.rng_seed, "overlap_mixer")),
            overlap_bias: vec![0.0; c3],
        }
    }
}

fn affine_concat(left: &Matrix, right: &Matrix, weight: &Matrix, bias: &[f64], op: &'static str) -> Result<Matrix> {
    let (a, b) = (left.cols(), right.cols());
    if weight.rows() != a + b {
        return Err(mismatch(op, a + b, weight.rows()));
    }
    if bias.len() != weight.cols() {
        return Err(mismatch(op, weight.cols(), bias.len()));
    }
    let mut input = Matrix::zeros(left.rows(), a + b);
    for p in 0..left.rows() {
        let row = input.row_mut(p);
        row[..a].copy_from_slice(left.row(p));
        row[a..].copy_from_slice(right.row(p));
    }
    let mut out = input.matmul(weight)?;
    for p in 0..out.rows() {
        for (v, bb) in out.row_mut(p).iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(out)
}

/// `Y_n = [phi_Y(F_n), y_n] W_y + b_y` from an already-transformed neighbor feature.
pub fn neighbor_label_feature(phi_y_neighbor: &FeatureGrid, label_signal: &[f64], mixers: &NeighborMixers) -> Result<FeatureGrid> {
    let hw = phi_y_neighbor.shape.hw();
    if label_signal.len() != hw {
        return Err(mismatch("neighbor_label_feature", hw, label_signal.len()));
    }
    let y = Matrix::from_vec(hw, 1, label_signal.to_vec())?;
    let out = affine_concat(&phi_y_neighbor.data, &y, &mixers.label_weight, &mixers.label_bias, "neighbor_label_feature")?;
    FeatureGrid::new(phi_y_neighbor.shape, out)
}

/// `H_t = [S_t, Y_n] W_h + b_h` for one object.
pub fn overlap_from_parts(similarity: &FeatureGrid, label_feature: &FeatureGrid, mixers: &NeighborMixers) -> Result<FeatureGrid> {
    if similarity.shape != label_feature.shape {
        return Err(mismatch("overlapped_feature", similarity.shape.hw(), label_feature.shape.hw()));
    }
    let out = affine_concat(
        &similarity.data,
        &label_feature.data,
        &mixers.overlap_weight,
        &mixers.overlap_bias,
        "overlapped_feature",
    )?;
    FeatureGrid::new(similarity.shape, out)
}

pub fn overlapped_feature(
    similarity: &FeatureGrid,
    f_neighbor: &FeatureGrid,
    label_signal: &[f64],
    phi_y: &FeatureTransform,
    mixers: &NeighborMixers,
) -> Result<FeatureGrid> {
    let label_feature = neighbor_label_feature(&phi_y.apply(f_neighbor)?, label_signal, mixers)?;
    overlap_from_parts(similarity, &label_feature, mixers)
}

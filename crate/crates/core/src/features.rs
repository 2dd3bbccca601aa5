//! Frame features and the four per-purpose feature transforms.
//!
//! The frame encoder is a deterministic stand-in for a trained backbone: each
//! grid cell gets a raw descriptor
//!
//! ```text
//! [ mean Lab of the cell | mean Lab of the 3x3 cell neighborhood |
//!   luma gradient-orientation histogram | sin/cos code of (row, col) ]
//! ```
//!
//! which is projected to `c1` dimensions by a seeded semi-orthogonal matrix
//! and L2-normalized per row. Anything implementing [`FeatureEncoder`] can
//! replace it.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::config::{DescriptorConfig, EngineConfig};
use crate::error::{mismatch, Result};
use crate::grid::{FeatureGrid, GridShape};
use crate::image::{luma, rgb_to_lab, RgbFrame};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, seeded_matrix};

/// Turns a frame into an `hw x c1` feature grid.
pub trait FeatureEncoder {
    fn channels(&self) -> usize;
    fn stride(&self) -> usize;
    fn encode(&self, frame: &RgbFrame) -> Result<FeatureGrid>;
}

#[derive(Debug, Clone)]
pub struct FrameEncoder {
    stride: usize,
    descriptor: DescriptorConfig,
    projection: Matrix,
}

impl FrameEncoder {
    pub fn new(config: &EngineConfig) -> Self {
        let descriptor = config.descriptor.clone();
        let projection = seeded_matrix(
            descriptor.raw_dims(),
            config.c1,
            derive_seed(config.rng_seed, "frame_projection"),
        );
        Self {
            stride: config.stride,
            descriptor,
            projection,
        }
    }

    /// The raw (pre-projection) per-cell descriptor.
    pub fn describe(&self, frame: &RgbFrame) -> Result<(GridShape, Matrix)> {
        let shape = GridShape::new(frame.width, frame.height, self.stride)?;
        let d = &self.descriptor;
        let (w, h) = (frame.width, frame.height);
        let lab: Vec<[f64; 3]> = frame.data.iter().map(|&p| rgb_to_lab(p)).collect();
        let lum: Vec<f64> = frame.data.iter().map(|&p| luma(p)).collect();

        // per-cell Lab sums and pixel counts, reused for the 3x3 context
        let hw = shape.hw();
        let mut lab_sum = vec![[0.0f64; 3]; hw];
        let mut count = vec![0usize; hw];
        let bins = d.gradient_bins;
        let mut hist = vec![0.0f64; hw * bins];
        for y in 0..h {
            for x in 0..w {
                let p = shape.cell_of_pixel(x, y);
                let i = y * w + x;
                for ch in 0..3 {
                    lab_sum[p][ch] += lab[i][ch];
                }
                count[p] += 1;
                let gx = (lum[y * w + (x + 1).min(w - 1)] - lum[y * w + x.saturating_sub(1)]) * 0.5;
                let gy = (lum[(y + 1).min(h - 1) * w + x] - lum[y.saturating_sub(1) * w + x]) * 0.5;
                let mag = libm::hypot(gx, gy);
                if mag > 0.0 {
                    let mut ang = libm::atan2(gy, gx);
                    if ang < 0.0 {
                        ang += PI;
                    }
                    let b = ((ang / PI * bins as f64) as usize).min(bins - 1);
                    hist[p * bins + b] += mag;
                }
            }
        }

        let dims = d.raw_dims();
        let mut raw = Matrix::zeros(hw, dims);
        for p in 0..hw {
            let (r, c) = shape.cell_of(p);
            let row = raw.row_mut(p);
            let n = count[p] as f64;
            for ch in 0..3 {
                row[ch] = d.color_weight * lab_sum[p][ch] / n;
            }
            let mut ctx = [0.0; 3];
            let mut ctx_n = 0usize;
            for rr in r.saturating_sub(1)..=(r + 1).min(shape.grid_h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(shape.grid_w - 1) {
                    let q = shape.index_of(rr, cc);
                    for ch in 0..3 {
                        ctx[ch] += lab_sum[q][ch];
                    }
                    ctx_n += count[q];
                }
            }
            for ch in 0..3 {
                row[3 + ch] = d.context_weight * ctx[ch] / ctx_n as f64;
            }
            for b in 0..bins {
                row[6 + b] = d.gradient_weight * hist[p * bins + b] / n;
            }
            let base = 6 + bins;
            let fr = r as f64 / shape.grid_h as f64;
            let fc = c as f64 / shape.grid_w as f64;
            for (k, &f) in d.position_frequencies.iter().enumerate() {
                let o = base + 4 * k;
                row[o] = d.position_weight * libm::sin(2.0 * PI * f * fr);
                row[o + 1] = d.position_weight * libm::cos(2.0 * PI * f * fr);
                row[o + 2] = d.position_weight * libm::sin(2.0 * PI * f * fc);
                row[o + 3] = d.position_weight * libm::cos(2.0 * PI * f * fc);
            }
        }
        Ok((shape, raw))
    }
}

impl FeatureEncoder for FrameEncoder {
    fn channels(&self) -> usize {
        self.projection.cols()
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn encode(&self, frame: &RgbFrame) -> Result<FeatureGrid> {
        let (shape, raw) = self.describe(frame)?;
        let mut f = raw.matmul(&self.projection)?;
        for p in 0..f.rows() {
            let row = f.row_mut(p);
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        FeatureGrid::new(shape, f)
    }
}

/// Which of the four per-purpose transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    /// Matching features for transition matrices.
    Affinity,
    /// Features compared to estimate transfer reliability.
    Reliability,
    /// Features compared between neighbor frames.
    Similarity,
    /// Neighbor features combined with the neighbor label.
    Neighbor,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Affinity => "phi_a",
            Self::Reliability => "phi_r",
            Self::Similarity => "phi_s",
            Self::Neighbor => "phi_y",
        }
    }

    fn gain(self, config: &EngineConfig) -> f64 {
        match self {
            Self::Affinity => config.affinity_gain,
            Self::Reliability => config.reliability_gain,
            Self::Similarity => config.similarity_gain,
            Self::Neighbor => config.neighbor_gain,
        }
    }
}

/// A per-cell affine map `x -> x W + b` from `c1` to `c2` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform {
    pub kind: TransformKind,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl FeatureTransform {
    pub fn seeded(kind: TransformKind, config: &EngineConfig) -> Self {
        let mut weight = seeded_matrix(config.c1, config.c2, derive_seed(config.rng_seed, kind.name()));
        weight.scale(kind.gain(config));
        Self {
            kind,
            weight,
            bias: vec![0.0; config.c2],
        }
    }

    pub fn apply(&self, f: &FeatureGrid) -> Result<FeatureGrid> {
        apply_transform(f, self)
    }
}

pub fn apply_transform(f: &FeatureGrid, t: &FeatureTransform) -> Result<FeatureGrid> {
    if f.channels() != t.weight.rows() {
        return Err(mismatch("apply_transform", t.weight.rows(), f.channels()));
    }
    if t.bias.len() != t.weight.cols() {
        return Err(mismatch("apply_transform bias", t.weight.cols(), t.bias.len()));
    }
    let mut out = f.data.matmul(&t.weight)?;
    for p in 0..out.rows() {
        for (v, b) in out.row_mut(p).iter_mut().zip(&t.bias) {
            *v += b;
        }
    }
    FeatureGrid::new(f.shape, out)
}

/// The four transforms of a session.
#[derive(Debug, Clone)]
pub struct TransformSet {
    pub affinity: FeatureTransform,
    pub reliability: FeatureTransform,
    pub similarity: FeatureTransform,
    pub neighbor: FeatureTransform,
}

impl TransformSet {
    pub fn seeded(config: &EngineConfig) -> Self {
        Self {
            affinity: FeatureTransform::seeded(TransformKind::Affinity, config),
            reliability: FeatureTransform::seeded(TransformKind::Reliability, config),
            similarity: FeatureTransform::seeded(TransformKind::Similarity, config),
            neighbor: FeatureTransform::seeded(TransformKind::Neighbor, config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{uniform_matrix, SplitMix64};

    fn noisy_frame(w: usize, h: usize, seed: u64) -> RgbFrame {
        let mut rng = SplitMix64::new(seed);
        let data = (0..w * h).map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()]).collect();
        RgbFrame::new(w, h, data).unwrap()
    }

    #[test]
    fn uniform_frame_rows_differ_only_in_position() {
        let cfg = EngineConfig::default();
        let enc = FrameEncoder::new(&cfg);
        let (_, raw) = enc.describe(&RgbFrame::filled(32, 24, [0.5, 0.5, 0.5])).unwrap();
        let non_pos = 6 + cfg.descriptor.gradient_bins;
        for p in 1..raw.rows() {
            assert_eq!(&raw.row(p)[..non_pos], &raw.row(0)[..non_pos]);
        }
        assert_ne!(raw.row(0)[non_pos..], raw.row(raw.rows() - 1)[non_pos..]);
    }

    #[test]
    fn encoding_is_deterministic_and_normalized() {
        let cfg = EngineConfig::default();
        let frame = noisy_frame(40, 32, 1);
        let a = FrameEncoder::new(&cfg).encode(&frame).unwrap();
        let b = FrameEncoder::new(&cfg).encode(&frame.clone()).unwrap();
        assert_eq!(a, b);
        for p in 0..a.shape.hw() {
            let n: f64 = a.row(p).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn stride_eight_64px_has_64_rows() {
        let f = FrameEncoder::new(&EngineConfig::default())
            .encode(&noisy_frame(64, 64, 2))
            .unwrap();
        assert_eq!(f.data.rows(), 64);
        assert_eq!(f.channels(), 64);
    }

    #[test]
    fn frame_smaller_than_a_cell_is_invalid() {
        let enc = FrameEncoder::new(&EngineConfig::default());
        assert!(enc.encode(&noisy_frame(4, 64, 3)).is_err());
    }

    #[test]
    fn permuting_inside_a_constant_cell_keeps_mean_color() {
        // cell (0,0) is a checkerboard of two colors; swapping the two colors'
        // positions inside its interior must not change the mean-color part
        let cfg = EngineConfig::default();
        let enc = FrameEncoder::new(&cfg);
        let mut a = RgbFrame::filled(16, 16, [0.2, 0.4, 0.6]);
        for y in 1..7 {
            for x in 1..7 {
                if (x + y) % 2 == 0 {
                    a.data[y * 16 + x] = [0.9, 0.1, 0.1];
                }
            }
        }
        let mut b = a.clone();
        for y in 1..7 {
            for x in 1..7 {
                let other = if (x + y) % 2 == 0 { [0.2, 0.4, 0.6] } else { [0.9, 0.1, 0.1] };
                b.data[y * 16 + x] = other;
            }
        }
        let (_, ra) = enc.describe(&a).unwrap();
        let (_, rb) = enc.describe(&b).unwrap();
        for ch in 0..3 {
            assert!((ra.get(0, ch) - rb.get(0, ch)).abs() < 1e-12);
        }
    }

    fn grid(rows: usize, cols: usize, seed: u64) -> FeatureGrid {
        let shape = GridShape::new(rows * 8, 8, 8).unwrap();
        FeatureGrid::new(shape, uniform_matrix(rows, cols, seed)).unwrap()
    }

    #[test]
    fn identity_transform_returns_input() {
        let f = grid(5, 4, 1);
        let t = FeatureTransform {
            kind: TransformKind::Affinity,
            weight: Matrix::identity(4),
            bias: vec![0.0; 4],
        };
        assert_eq!(apply_transform(&f, &t).unwrap(), f);
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let f = grid(5, 4, 2);
        let t = FeatureTransform {
            kind: TransformKind::Reliability,
            weight: Matrix::zeros(4, 3),
            bias: vec![1.0, -2.0, 0.5],
        };
        let out = apply_transform(&f, &t).unwrap();
        for p in 0..5 {
            assert_eq!(out.row(p), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn transform_matches_scalar_loop() {
        let f = grid(6, 5, 3);
        let t = FeatureTransform {
            kind: TransformKind::Similarity,
            weight: uniform_matrix(5, 3, 4),
            bias: vec![0.1, 0.2, 0.3],
        };
        let out = apply_transform(&f, &t).unwrap();
        for p in 0..6 {
            for j in 0..3 {
                let mut s = t.bias[j];
                for k in 0..5 {
                    s += f.data.get(p, k) * t.weight.get(k, j);
                }
                assert!((out.data.get(p, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_dimension_mismatch() {
        let f = grid(3, 4, 5);
        let t = FeatureTransform::seeded(TransformKind::Neighbor, &EngineConfig::default());
        assert!(apply_transform(&f, &t).is_err());
    }

    #[test]
    fn transforms_are_distinct() {
        let s = TransformSet::seeded(&EngineConfig::default());
        assert_ne!(s.affinity.weight.as_slice()[..4], s.reliability.weight.as_slice()[..4]);
    }
}

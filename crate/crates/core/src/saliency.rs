//! Sparse marks to dense per-object saliency, and saliency to object features.
//!
//! Saliency for object `k` at pixel `x` is
//! `sigmoid(beta * (d_neg(x) - d_pos(x)))`, with `d_pos` / `d_neg` the
//! geodesic distance to the nearest mark of `k` / of anything else, and
//! `d_neg` capped at the background distance. A geodesic step between
//! 8-neighbors costs its Euclidean length plus
//! `edge_weight * max(0, |rgb(q) - rgb(p)| - noise_floor)`, so paths that
//! cross color edges are long.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::annotation::AnnotationSet;
use crate::config::EngineConfig;
use crate::error::{mismatch, Error, Result};
use crate::grid::{FeatureGrid, GridShape};
use crate::image::RgbFrame;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, seeded_matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frame_index: usize,
    pub object_id: u8,
    pub width: usize,
    pub height: usize,
    /// Full-resolution values in `[0, 1]`.
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn to_grid(&self, shape: &GridShape) -> Vec<f64> {
        shape.reduce_mean(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeature {
    pub frame_index: usize,
    pub object_id: u8,
    /// `hw x c3`.
    pub data: FeatureGrid,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize, f64); 8] = [
    (-1, 0, 1.0),
    (1, 0, 1.0),
    (0, -1, 1.0),
    (0, 1, 1.0),
    (-1, -1, core::f64::consts::SQRT_2),
    (1, -1, core::f64::consts::SQRT_2),
    (-1, 1, core::f64::consts::SQRT_2),
    (1, 1, core::f64::consts::SQRT_2),
];

/// Multi-source geodesic distance (Dijkstra over the 8-connected pixel graph).
/// Color differences up to `noise_floor` are free. Pixels unreachable from
/// any source, or all pixels when `sources` is empty, get `f64::INFINITY`.
pub fn geodesic_distance(frame: &RgbFrame, sources: &[(usize, usize)], edge_weight: f64, noise_floor: f64) -> Vec<f64> {
    let (w, h) = (frame.width, frame.height);
    let mut dist = vec![f64::INFINITY; w * h];
    let mut heap = BinaryHeap::new();
    for &(x, y) in sources {
        let i = y * w + x;
        if dist[i] > 0.0 {
            dist[i] = 0.0;
            heap.push(Entry { dist: 0.0, idx: i });
        }
    }
    while let Some(Entry { dist: d, idx }) = heap.pop() {
        if d > dist[idx] {
            continue;
        }
        let (x, y) = ((idx % w) as isize, (idx / w) as isize);
        let c = frame.data[idx];
        for &(dx, dy, len) in &NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let q = frame.data[j];
            let diff = libm::sqrt((0..3).map(|i| (q[i] - c[i]) * (q[i] - c[i])).sum::<f64>());
            let nd = d + len + edge_weight * (diff - noise_floor).max(0.0);
            if nd < dist[j] {
                dist[j] = nd;
                heap.push(Entry { dist: nd, idx: j });
            }
        }
    }
    dist
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Parameters of the geodesic saliency generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyParams {
    pub beta: f64,
    pub edge_weight: f64,
    pub noise_floor: f64,
    /// Upper bound of `d_neg`.
    pub background_distance: f64,
}

impl SaliencyParams {
    /// Resolves config defaults against a frame's diagonal.
    pub fn for_frame(config: &EngineConfig, width: usize, height: usize) -> Self {
        let diag = libm::hypot(width as f64, height as f64);
        Self {
            beta: config.saliency_beta.unwrap_or(4.0 / diag),
            edge_weight: config.geodesic_edge_weight * diag,
            noise_floor: config.geodesic_noise_floor,
            background_distance: config.background_distance * diag,
        }
    }
}

/// Dense saliency of `object_id` from the sparse marks in `annotations`.
///
/// Marked pixels are pinned: 1 under a mark of `object_id`, 0 under any
/// other mark (a pixel carrying both keeps the formula value 0.5).
pub fn sparse_to_dense(
    annotations: &AnnotationSet,
    frame: &RgbFrame,
    object_id: u8,
    params: SaliencyParams,
) -> Result<SaliencyMap> {
    if annotations.marks.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    let (w, h) = (frame.width, frame.height);
    for m in &annotations.marks {
        if m.x >= w || m.y >= h {
            return Err(Error::MarkOutOfBounds {
                x: m.x,
                y: m.y,
                width: w,
                height: h,
            });
        }
    }
    let pos: Vec<_> = annotations.positives(object_id).map(|m| (m.x, m.y)).collect();
    let neg: Vec<_> = annotations.negatives(object_id).map(|m| (m.x, m.y)).collect();

    let mut values = if pos.is_empty() {
        vec![0.0; w * h]
    } else {
        let d_pos = geodesic_distance(frame, &pos, params.edge_weight, params.noise_floor);
        // Unmarked background is never farther than the background distance.
        let cap = params.background_distance;
        let d_neg = if neg.is_empty() {
            vec![cap; w * h]
        } else {
            let mut d = geodesic_distance(frame, &neg, params.edge_weight, params.noise_floor);
            d.iter_mut().for_each(|v| *v = v.min(cap));
            d
        };
        d_pos
            .iter()
            .zip(&d_neg)
            .map(|(&dp, &dn)| sigmoid(params.beta * (dn - dp)))
            .collect()
    };
    let mut pinned_pos = vec![false; w * h];
    for &(x, y) in &pos {
        values[y * w + x] = 1.0;
        pinned_pos[y * w + x] = true;
    }
    for &(x, y) in &neg {
        let i = y * w + x;
        values[i] = if pinned_pos[i] { 0.5 } else { 0.0 };
    }
    Ok(SaliencyMap {
        frame_index: annotations.frame_index,
        object_id,
        width: w,
        height: h,
        values,
    })
}

/// Seeded map from `[F(p), s(p), s(p) F(p)]` (`2 c1 + 1` wide) to `c3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProjector {
    pub weight: Matrix,
}

impl ObjectProjector {
    pub fn seeded(config: &EngineConfig) -> Self {
        Self {
            weight: seeded_matrix(2 * config.c1 + 1, config.c3, derive_seed(config.rng_seed, "object_mixer")),
        }
    }
}

/// Object feature of one annotated frame. `saliency_grid` is the saliency
/// reduced to the grid by cell mean.
pub fn extract_object_feature(
    features: &FeatureGrid,
    saliency_grid: &[f64],
    projector: &ObjectProjector,
    frame_index: usize,
    object_id: u8,
) -> Result<ObjectFeature> {
    let hw = features.shape.hw();
    let c1 = features.channels();
    if saliency_grid.len() != hw {
        return Err(mismatch("extract_object_feature saliency", hw, saliency_grid.len()));
    }
    if projector.weight.rows() != 2 * c1 + 1 {
        return Err(mismatch("extract_object_feature projector", 2 * c1 + 1, projector.weight.rows()));
    }
    let mut input = Matrix::zeros(hw, 2 * c1 + 1);
    for p in 0..hw {
        let s = saliency_grid[p];
        let f = features.row(p);
        let row = input.row_mut(p);
        row[..c1].copy_from_slice(f);
        row[c1] = s;
        for (o, &v) in row[c1 + 1..].iter_mut().zip(f) {
            *o = s * v;
        }
    }
    Ok(ObjectFeature {
        frame_index,
        object_id,
        data: FeatureGrid::new(features.shape, input.matmul(&projector.weight)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Mark;
    use crate::rng::{uniform_matrix, SplitMix64};

    fn params(frame: &RgbFrame) -> SaliencyParams {
        SaliencyParams::for_frame(&EngineConfig::default(), frame.width, frame.height)
    }

    #[test]
    fn uniform_image_single_positive() {
        let f = RgbFrame::filled(20, 20, [0.5; 3]);
        let a = AnnotationSet::new(0, vec![Mark::new(10, 10, 1)]);
        let s = sparse_to_dense(&a, &f, 1, params(&f)).unwrap();
        assert!(s.values.iter().all(|&v| v >= 0.5));
        assert_eq!(s.values[10 * 20 + 10], 1.0);
        // the formula value next to the mark is the largest unpinned one
        let near = s.values[10 * 20 + 11];
        assert!(s.values.iter().enumerate().all(|(i, &v)| i == 210 || v <= near + 1e-15));
    }

    #[test]
    fn equidistant_marks_give_one_half() {
        let f = RgbFrame::filled(21, 5, [0.3; 3]);
        let a = AnnotationSet::new(0, vec![Mark::new(5, 2, 1), Mark::new(15, 2, 0)]);
        let s = sparse_to_dense(&a, &f, 1, params(&f)).unwrap();
        assert!((s.values[2 * 21 + 10] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_positive_marks_gives_zero() {
        let f = RgbFrame::filled(8, 8, [0.3; 3]);
        let a = AnnotationSet::new(0, vec![Mark::new(1, 1, 2)]);
        let s = sparse_to_dense(&a, &f, 1, params(&f)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_annotation_is_an_error() {
        let f = RgbFrame::filled(8, 8, [0.3; 3]);
        let a = AnnotationSet::new(0, vec![]);
        assert_eq!(sparse_to_dense(&a, &f, 1, params(&f)), Err(Error::EmptyAnnotation));
    }

    #[test]
    fn geodesic_matches_euclid_on_flat_image_axes() {
        let f = RgbFrame::filled(10, 10, [0.1; 3]);
        let d = geodesic_distance(&f, &[(0, 0)], 5.0, 0.0);
        assert_eq!(d[9], 9.0);
        assert!((d[9 * 10 + 9] - 9.0 * core::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn saliency_is_monotone_in_positive_marks() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..20 {
            let (w, h) = (12, 10);
            let data = (0..w * h).map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()]).collect();
            let f = RgbFrame::new(w, h, data).unwrap();
            let mut marks = vec![
                Mark::new(rng.below(w), rng.below(h), 1),
                Mark::new(rng.below(w), rng.below(h), 0),
            ];
            let before = sparse_to_dense(&AnnotationSet::new(0, marks.clone()), &f, 1, params(&f)).unwrap();
            marks.push(Mark::new(rng.below(w), rng.below(h), 1));
            let after = sparse_to_dense(&AnnotationSet::new(0, marks), &f, 1, params(&f)).unwrap();
            for (b, a) in before.values.iter().zip(&after.values) {
                assert!(a >= b, "saliency decreased: {b} -> {a}");
            }
        }
    }

    /// Relaxes every edge until nothing changes.
    fn bellman_ford(f: &RgbFrame, src: (usize, usize), edge_weight: f64, floor: f64) -> Vec<f64> {
        let (w, h) = (f.width as isize, f.height as isize);
        let mut d = vec![f64::INFINITY; f.width * f.height];
        d[src.1 * f.width + src.0] = 0.0;
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    let i = (y * w + x) as usize;
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let (nx, ny) = (x + dx, y + dy);
                            if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let j = (ny * w + nx) as usize;
                            let (a, b) = (f.data[i], f.data[j]);
                            let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                            let len = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                            let nd = d[i] + len + edge_weight * (diff - floor).max(0.0);
                            if nd < d[j] - 1e-12 {
                                d[j] = nd;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                return d;
            }
        }
    }

    #[test]
    fn two_region_fixture_separates_regions() {
        let (w, h, split) = (40, 24, 20);
        let data = (0..w * h)
            .map(|i| if i % w < split { [0.8, 0.3, 0.2] } else { [0.2, 0.4, 0.7] })
            .collect();
        let f = RgbFrame::new(w, h, data).unwrap();
        let p = params(&f);
        let a = AnnotationSet::new(0, vec![Mark::new(8, 12, 1), Mark::new(31, 12, 0)]);
        let s = sparse_to_dense(&a, &f, 1, p).unwrap();

        let d_pos = bellman_ford(&f, (8, 12), p.edge_weight, p.noise_floor);
        let d_neg = bellman_ford(&f, (31, 12), p.edge_weight, p.noise_floor);
        let (mut in_a, mut in_b) = (0.0, 0.0);
        for i in 0..w * h {
            let want = match i {
                _ if i == 12 * w + 8 => 1.0,
                _ if i == 12 * w + 31 => 0.0,
                _ => 1.0 / (1.0 + (-p.beta * (d_neg[i].min(p.background_distance) - d_pos[i])).exp()),
            };
            assert!((s.values[i] - want).abs() < 1e-9, "pixel {i}: {} vs {want}", s.values[i]);
            if i % w < split {
                in_a += s.values[i];
            } else {
                in_b += s.values[i];
            }
        }
        let half = (split * h) as f64;
        assert!(in_a / half > 0.9, "mean in A {}", in_a / half);
        assert!(in_b / half < 0.1, "mean in B {}", in_b / half);
    }

    fn feature_grid(hw: usize, c: usize, seed: u64) -> FeatureGrid {
        FeatureGrid::new(GridShape::new(hw * 4, 4, 4).unwrap(), uniform_matrix(hw, c, seed)).unwrap()
    }

    #[test]
    fn object_feature_without_saliency_ignores_object_columns() {
        let cfg = EngineConfig {
            c1: 3,
            c3: 4,
            ..EngineConfig::default()
        };
        let proj = ObjectProjector::seeded(&cfg);
        let f = feature_grid(5, 3, 1);
        let zero = extract_object_feature(&f, &[0.0; 5], &proj, 0, 1).unwrap();
        let want = f.data.matmul(&crate::linalg::Matrix::from_vec(3, 4, proj.weight.as_slice()[..12].to_vec()).unwrap()).unwrap();
        for (a, b) in zero.data.data.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let one = extract_object_feature(&f, &[1.0; 5], &proj, 0, 1).unwrap();
        assert_ne!(zero.data, one.data);
    }

    #[test]
    fn object_feature_matches_scalar_loop_and_is_linear_in_f() {
        let cfg = EngineConfig {
            c1: 3,
            c3: 2,
            ..EngineConfig::default()
        };
        let proj = ObjectProjector::seeded(&cfg);
        let f = feature_grid(4, 3, 2);
        let g = feature_grid(4, 3, 3);
        let s = [0.1, 0.9, 0.5, 0.0];
        let e = extract_object_feature(&f, &s, &proj, 0, 1).unwrap();
        for p in 0..4 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += f.data.get(p, k) * proj.weight.get(k, j);
                    acc += s[p] * f.data.get(p, k) * proj.weight.get(4 + k, j);
                }
                acc += s[p] * proj.weight.get(3, j);
                assert!((e.data.data.get(p, j) - acc).abs() < 1e-12);
            }
        }
        // E(F + G) = E(F) + E(G) - E(0) for fixed saliency
        let sum = FeatureGrid::new(
            f.shape,
            Matrix::from_vec(
                4,
                3,
                f.data.as_slice().iter().zip(g.data.as_slice()).map(|(a, b)| a + b).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let zero = FeatureGrid::new(f.shape, Matrix::zeros(4, 3)).unwrap();
        let ef = e.data.data;
        let eg = extract_object_feature(&g, &s, &proj, 0, 1).unwrap().data.data;
        let es = extract_object_feature(&sum, &s, &proj, 0, 1).unwrap().data.data;
        let e0 = extract_object_feature(&zero, &s, &proj, 0, 1).unwrap().data.data;
        for i in 0..8 {
            let lhs = es.as_slice()[i];
            let rhs = ef.as_slice()[i] + eg.as_slice()[i] - e0.as_slice()[i];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

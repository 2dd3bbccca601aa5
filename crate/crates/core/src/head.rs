//! Closed-form per-object segmentation head and soft aggregation.
//!
//! The head is a ridge regression over `x(p) = [F(p), G(p), H(p), 1]` fitted
//! to saliency pseudo-labels of the annotated frames. Scores are squashed by
//! `sigmoid(s (w.x - 0.5))`. Per-object probabilities are merged with an
//! implicit background by normalized odds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::grid::{FeatureGrid, GridShape};
use crate::image::LabelImage;
use crate::linalg::{dot, solve_spd, Matrix};
use crate::saliency::sigmoid;

const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitStats {
    pub training_cells: usize,
    pub positive_rate: f64,
    /// Mean squared residual on the training cells.
    pub residual: f64,
    /// All targets were one class; the head predicts the class rate only.
    pub prior_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub object_id: u8,
    /// Weights over `[F, G, H]` followed by the bias.
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub sharpness: f64,
    pub stats: FitStats,
}

/// Stacks `[F, G, H, 1]` row-wise. `H` may be `None` (the overlap branch is
/// disabled), in which case its block is zero-filled to width `c3`.
pub fn head_input(f: &FeatureGrid, g: &FeatureGrid, h: Option<&FeatureGrid>) -> Result<Matrix> {
    f.check_hw(g, "head_input")?;
    let c3 = g.channels();
    if let Some(h) = h {
        f.check_hw(h, "head_input")?;
        if h.channels() != c3 {
            return Err(mismatch("head_input overlap width", c3, h.channels()));
        }
    }
    let (hw, c1) = (f.shape.hw(), f.channels());
    let d = c1 + 2 * c3 + 1;
    let mut x = Matrix::zeros(hw, d);
    for p in 0..hw {
        let row = x.row_mut(p);
        row[..c1].copy_from_slice(f.row(p));
        row[c1..c1 + c3].copy_from_slice(g.row(p));
        if let Some(h) = h {
            row[c1 + c3..c1 + 2 * c3].copy_from_slice(h.row(p));
        }
        row[d - 1] = 1.0;
    }
    Ok(x)
}

impl LinearHead {
    /// Ridge fit `(X^T S X + lambda I') w = X^T S y`, where `I'` leaves the
    /// bias (last column of `X`, expected to be all ones) unpenalized. With
    /// `balanced`, `S` weights each class by `n / (2 n_class)`; otherwise `S = I`.
    pub fn fit(object_id: u8, x: &Matrix, targets: &[f64], lambda: f64, sharpness: f64, balanced: bool) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if targets.len() != n {
            return Err(mismatch("fit_head targets", n, targets.len()));
        }
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("fit_head needs at least one training cell".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("head lambda must be > 0, got {lambda}")));
        }
        let positive_rate = targets.iter().sum::<f64>() / n as f64;
        let one_class = targets.iter().all(|&t| t == targets[0]);
        let weights = if one_class {
            let mut w = vec![0.0; d];
            w[d - 1] = positive_rate;
            w
        } else {
            let n_pos = targets.iter().filter(|&&t| t >= 0.5).count();
            let (w_pos, w_neg) = if balanced {
                (n as f64 / (2 * n_pos) as f64, n as f64 / (2 * (n - n_pos)) as f64)
            } else {
                (1.0, 1.0)
            };
            let mut gram = Matrix::zeros(d, d);
            let mut rhs = vec![0.0; d];
            for (r, &t) in targets.iter().enumerate() {
                let row = x.row(r);
                let sw = if t >= 0.5 { w_pos } else { w_neg };
                for i in 0..d {
                    let xi = sw * row[i];
                    if xi == 0.0 {
                        continue;
                    }
                    rhs[i] += xi * t;
                    let g = gram.row_mut(i);
                    for j in i..d {
                        g[j] += xi * row[j];
                    }
                }
            }
            for i in 0..d {
                for j in 0..i {
                    let v = gram.get(j, i);
                    gram.set(i, j, v);
                }
                if i + 1 < d {
                    let v = gram.get(i, i) + lambda;
                    gram.set(i, i, v);
                }
            }
            solve_spd(&gram, &rhs)?
        };
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("fit_head weights"));
        }
        let residual = (0..n)
            .map(|r| {
                let e = dot(x.row(r), &weights) - targets[r];
                e * e
            })
            .sum::<f64>()
            / n as f64;
        Ok(Self {
            object_id,
            weights,
            lambda,
            sharpness,
            stats: FitStats {
                training_cells: n,
                positive_rate,
                residual,
                prior_only: one_class,
            },
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(x, &self.weights)
    }

    pub fn probability(&self, score: f64) -> f64 {
        sigmoid(self.sharpness * (score - 0.5)).clamp(0.0, 1.0)
    }

    /// Per-cell probabilities for a stacked input from [`head_input`].
    pub fn predict_grid(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(mismatch("predict", self.weights.len(), x.cols()));
        }
        Ok((0..x.rows()).map(|p| self.probability(self.score(x.row(p)))).collect())
    }

    /// Full-resolution probability map (bilinear from cell centers).
    pub fn predict(&self, shape: &GridShape, x: &Matrix) -> Result<Vec<f64>> {
        let cells = self.predict_grid(x)?;
        Ok(shape.upsample_bilinear(&cells).into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

/// Aggregated per-pixel label distribution and its argmax mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    pub width: usize,
    pub height: usize,
    /// `probabilities[k][i]` is `q_k` at pixel `i`; `k = 0` is background.
    pub probabilities: Vec<Vec<f64>>,
    pub mask: LabelImage,
}

impl LabelField {
    pub fn num_objects(&self) -> usize {
        self.probabilities.len() - 1
    }

    /// `q_k` of object `k >= 1`.
    pub fn object_probability(&self, k: u8) -> &[f64] {
        &self.probabilities[k as usize]
    }

    /// All-background field.
    pub fn background(width: usize, height: usize, num_objects: usize) -> Self {
        let mut probabilities = vec![vec![0.0; width * height]; num_objects + 1];
        probabilities[0] = vec![1.0; width * height];
        Self {
            width,
            height,
            probabilities,
            mask: LabelImage::empty(width, height),
        }
    }
}

/// Normalized-odds aggregation at one pixel. Returns `(q_0..=q_K, label)`.
pub fn aggregate_pixel(probs: &[f64], out: &mut [f64]) -> u8 {
    debug_assert_eq!(out.len(), probs.len() + 1);
    let mut total = 1.0;
    for (o, &p) in out[1..].iter_mut().zip(probs) {
        let p = if p.is_nan() { 0.5 } else { p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) };
        *o = p / (1.0 - p);
        total += *o;
    }
    out[0] = 1.0;
    let mut best = 0usize;
    for k in 0..out.len() {
        out[k] /= total;
        if out[k] > out[best] {
            best = k;
        }
    }
    best as u8
}

/// Merges `K >= 1` full-resolution object probability maps.
pub fn soft_aggregate(prob_maps: &[Vec<f64>], width: usize, height: usize) -> Result<LabelField> {
    if prob_maps.is_empty() {
        return Err(Error::InvalidInput("soft_aggregate needs at least one object".into()));
    }
    if prob_maps.len() > u8::MAX as usize {
        return Err(Error::InvalidInput("at most 255 objects".into()));
    }
    let n = width * height;
    for m in prob_maps {
        if m.len() != n {
            return Err(mismatch("soft_aggregate", n, m.len()));
        }
    }
    let k = prob_maps.len();
    let mut probabilities = vec![vec![0.0; n]; k + 1];
    let mut labels = vec![0u8; n];
    let mut probs = vec![0.0; k];
    let mut q = vec![0.0; k + 1];
    for i in 0..n {
        for (p, m) in probs.iter_mut().zip(prob_maps) {
            *p = m[i];
        }
        labels[i] = aggregate_pixel(&probs, &mut q);
        for (dst, &v) in probabilities.iter_mut().zip(&q) {
            dst[i] = v;
        }
    }
    Ok(LabelField {
        width,
        height,
        probabilities,
        mask: LabelImage::new(width, height, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let mut q = [0.0; 3];
        let label = aggregate_pixel(&[0.8, 0.5], &mut q);
        assert!((q[1] - 4.0 / 6.0).abs() < 1e-15);
        assert!((q[2] - 1.0 / 6.0).abs() < 1e-15);
        assert!((q[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(label, 1);
    }

    #[test]
    fn even_odds_tie_goes_to_background() {
        let mut q = [0.0; 2];
        assert_eq!(aggregate_pixel(&[0.5], &mut q), 0);
        assert_eq!(q, [0.5, 0.5]);
    }

    #[test]
    fn equal_objects_tie_goes_to_lower_id() {
        let mut q = [0.0; 3];
        assert_eq!(aggregate_pixel(&[0.9, 0.9], &mut q), 1);
        assert_eq!(q[1], q[2]);
    }

    #[test]
    fn clamping_keeps_values_finite() {
        let mut q = [0.0; 3];
        aggregate_pixel(&[1.0, 0.0], &mut q);
        assert!(q.iter().all(|v| v.is_finite()));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_aggregate_builds_mask() {
        let f = soft_aggregate(&[vec![0.9, 0.1], vec![0.2, 0.3]], 2, 1).unwrap();
        assert_eq!(f.mask.data, vec![1, 0]);
        assert_eq!(f.num_objects(), 2);
    }

    proptest! {
        #[test]
        fn aggregation_sums_to_one(probs in proptest::collection::vec(0.0f64..=1.0, 1..6)) {
            let mut q = vec![0.0; probs.len() + 1];
            aggregate_pixel(&probs, &mut q);
            let s: f64 = q.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn aggregation_is_permutation_equivariant(probs in proptest::collection::vec(0.01f64..0.99, 2..5), rot in 0usize..4) {
            let k = probs.len();
            let mut rotated = probs.clone();
            rotated.rotate_left(rot % k);
            let (mut q, mut qr) = (vec![0.0; k + 1], vec![0.0; k + 1]);
            aggregate_pixel(&probs, &mut q);
            aggregate_pixel(&rotated, &mut qr);
            for j in 0..k {
                prop_assert!((qr[1 + j] - q[1 + (j + rot % k) % k]).abs() < 1e-15);
            }
            prop_assert!((qr[0] - q[0]).abs() < 1e-15);
        }
    }

    fn design(rows: &[[f64; 2]]) -> Matrix {
        let r: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1], 1.0]).collect();
        Matrix::from_rows(&r).unwrap()
    }

    #[test]
    fn three_point_normal_equations() {
        // x = [u, v, 1]; hand-solved normal equations with lambda on u and v only.
        let x = design(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let y = [1.0, 0.0, 1.0];
        let lambda = 0.5;
        let head = LinearHead::fit(1, &x, &y, lambda, 8.0, false).unwrap();
        // X^T X + L = [[2.5,1,2],[1,2.5,2],[2,2,3]], X^T y = [2,1,2]
        let a = [[2.5, 1.0, 2.0], [1.0, 2.5, 2.0], [2.0, 2.0, 3.0]];
        let b = [2.0, 1.0, 2.0];
        for (row, bi) in a.iter().zip(b) {
            let lhs: f64 = row.iter().zip(&head.weights).map(|(p, q)| p * q).sum();
            assert!((lhs - bi).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_fixture_is_fit_perfectly() {
        let mut rng = SplitMix64::new(9);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while rows.len() < 60 {
            let u = rng.next_symmetric();
            if u.abs() < 0.3 {
                continue;
            }
            let v = rng.next_symmetric();
            rows.push([u, v]);
            y.push(if u > 0.0 { 1.0 } else { 0.0 });
        }
        let x = design(&rows);
        let head = LinearHead::fit(1, &x, &y, 1e-3, 8.0, false).unwrap();
        let p = head.predict_grid(&x).unwrap();
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
        assert_eq!(correct, 60);
    }

    #[test]
    fn huge_lambda_keeps_only_the_bias() {
        let x = design(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.2]]);
        let y = [1.0, 0.0, 1.0, 0.0];
        let head = LinearHead::fit(1, &x, &y, 1e12, 8.0, false).unwrap();
        assert!(head.weights[0].abs() < 1e-9 && head.weights[1].abs() < 1e-9);
        assert!((head.weights[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn one_class_targets_fall_back_to_prior() {
        let x = design(&[[1.0, 0.0], [0.0, 1.0]]);
        let head = LinearHead::fit(1, &x, &[0.0, 0.0], 1.0, 8.0, false).unwrap();
        assert!(head.stats.prior_only);
        assert_eq!(head.weights, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn midpoint_score_is_half() {
        let x = design(&[[1.0, 0.0], [0.0, 1.0]]);
        let head = LinearHead::fit(1, &x, &[1.0, 0.0], 1.0, 8.0, false).unwrap();
        assert_eq!(head.probability(0.5), 0.5);
        assert!(head.probability(0.6) > head.probability(0.4));
        let s = 0.73;
        assert!((head.probability(s) - 1.0 / (1.0 + (-8.0 * (s - 0.5)).exp())).abs() < 1e-15);
    }
}

//! Transition matrices, feature transfer, reliability maps and R-attention
//! fusion of object features transferred from several annotated frames.
//!
//! For annotated frame `a` and target `t`:
//!
//! ```text
//! A[a->t]  = colsoftmax(phi_A(F_t) phi_A(F_a)^T)          hw x hw, columns sum to 1
//! E[t|a]   = A[a->t] E_a                                   transferred object feature
//! F[t|a]   = A[a->t] phi_R(F_a)                            transferred frame feature
//! R[t|a](p)= 1 / (max_c (F[t|a] - F[t|t])(p,c)^2 + eps)    in (0, 1/eps]
//! M[t|a](p)= softmax over sources of R[.](p)
//! G_t      = sum_a M[t|a] (.) E[t|a]                        row-wise weighting
//! R_t(p)   = max_a exp(R[t|a](p) - 1/eps)                   in [0, 1]
//! ```

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::features::FeatureTransform;
use crate::grid::{FeatureGrid, ReliabilityMap};
use crate::linalg::{column_softmax, Matrix};

/// Column-stochastic `hw x hw` matrix. Entry `(r, c)` is the probability
/// that source cell `c` maps to target cell `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub data: Matrix,
}

impl TransitionMatrix {
    pub fn hw(&self) -> usize {
        self.data.rows()
    }
}

/// Transition matrix from already-transformed (`phi_A`) features.
pub fn transition_from_embeddings(
    target: &FeatureGrid,
    source: &FeatureGrid,
    temperature_scaling: bool,
) -> Result<TransitionMatrix> {
    target.check_same(source, "transition_matrix")?;
    let mut logits = target.data.matmul_transposed(&source.data)?;
    if temperature_scaling {
        logits.scale(1.0 / libm::sqrt(target.channels() as f64));
    }
    Ok(TransitionMatrix {
        data: column_softmax(&logits)?,
    })
}

pub fn transition_matrix(
    f_target: &FeatureGrid,
    f_source: &FeatureGrid,
    phi_a: &FeatureTransform,
    temperature_scaling: bool,
) -> Result<TransitionMatrix> {
    f_target.check_same(f_source, "transition_matrix")?;
    transition_from_embeddings(&phi_a.apply(f_target)?, &phi_a.apply(f_source)?, temperature_scaling)
}

/// `A X`: carries a per-cell feature of the source frame to the target frame.
pub fn transfer(a: &TransitionMatrix, x: &FeatureGrid) -> Result<FeatureGrid> {
    if a.hw() != x.shape.hw() {
        return Err(mismatch("transfer", a.hw(), x.shape.hw()));
    }
    FeatureGrid::new(x.shape, a.data.matmul(&x.data)?)
}

/// Inverse worst-channel squared discrepancy between a transferred feature
/// and the target's self-transferred feature.
pub fn reliability(transferred: &FeatureGrid, self_transferred: &FeatureGrid, epsilon: f64) -> Result<ReliabilityMap> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("epsilon must be > 0, got {epsilon}")));
    }
    transferred.check_same(self_transferred, "reliability")?;
    let values = (0..transferred.shape.hw())
        .map(|p| {
            let worst = transferred
                .row(p)
                .iter()
                .zip(self_transferred.row(p))
                .map(|(a, b)| (a - b) * (a - b))
                .fold(0.0f64, f64::max);
            1.0 / (worst + epsilon)
        })
        .collect();
    ReliabilityMap::new(transferred.shape, values)
}

/// Sum that does not depend on the order of `terms`.
fn ordered_sum(terms: &mut [f64]) -> f64 {
    if terms.len() > 2 {
        terms.sort_unstable_by(f64::total_cmp);
    }
    terms.iter().sum()
}

/// Per-cell softmax over sources (R-attention), or uniform weights `1/N` when
/// `use_r_attention` is false.
pub fn attention_maps(reliabilities: &[ReliabilityMap], use_r_attention: bool) -> Result<Vec<ReliabilityMap>> {
    let first = reliabilities.first().ok_or(Error::NoSources)?;
    let shape = first.shape;
    for r in reliabilities {
        if r.shape != shape {
            return Err(mismatch("attention_maps", format_args!("{shape:?}"), format_args!("{:?}", r.shape)));
        }
    }
    let n = reliabilities.len();
    let hw = shape.hw();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; hw]; n];
    let mut scratch = vec![0.0; n];
    for p in 0..hw {
        if !use_r_attention {
            out.iter_mut().for_each(|m| m[p] = 1.0 / n as f64);
            continue;
        }
        let max = reliabilities.iter().map(|r| r.values[p]).fold(f64::NEG_INFINITY, f64::max);
        for (s, r) in scratch.iter_mut().zip(reliabilities) {
            *s = libm::exp(r.values[p] - max);
        }
        let mut terms = scratch.clone();
        let denom = ordered_sum(&mut terms);
        for (m, &e) in out.iter_mut().zip(&scratch) {
            m[p] = e / denom;
        }
    }
    out.into_iter().map(|v| ReliabilityMap::new(shape, v)).collect()
}

/// `R_t(p) = exp(max_i R[t|a_i](p) - 1/eps)`; equal to `max_i exp(...)` since
/// `exp` is monotone.
pub fn overall_reliability(reliabilities: &[ReliabilityMap], epsilon: f64) -> Result<ReliabilityMap> {
    let first = reliabilities.first().ok_or(Error::NoSources)?;
    let values = (0..first.shape.hw())
        .map(|p| {
            let max = reliabilities.iter().map(|r| r.values[p]).fold(f64::NEG_INFINITY, f64::max);
            libm::exp(max - 1.0 / epsilon).min(1.0)
        })
        .collect();
    ReliabilityMap::new(first.shape, values)
}

/// `G = sum_i M_i (.) E_i`.
pub fn interfuse(transferred: &[FeatureGrid], attention: &[ReliabilityMap]) -> Result<FeatureGrid> {
    let first = transferred.first().ok_or(Error::NoSources)?;
    if transferred.len() != attention.len() {
        return Err(mismatch("interfuse", transferred.len(), attention.len()));
    }
    for (e, m) in transferred.iter().zip(attention) {
        e.check_same(first, "interfuse")?;
        if m.shape != first.shape {
            return Err(mismatch("interfuse attention", first.shape.hw(), m.shape.hw()));
        }
    }
    let (hw, c) = (first.shape.hw(), first.channels());
    let mut out = Matrix::zeros(hw, c);
    let mut terms = vec![0.0; transferred.len()];
    for p in 0..hw {
        for ch in 0..c {
            for (t, (e, m)) in terms.iter_mut().zip(transferred.iter().zip(attention)) {
                *t = m.values[p] * e.data.get(p, ch);
            }
            out.set(p, ch, ordered_sum(&mut terms));
        }
    }
    FeatureGrid::new(first.shape, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    /// `G_t`, `hw x c3`.
    pub interfused: FeatureGrid,
    /// `M[t|a_i]`, one per source.
    pub attention: Vec<ReliabilityMap>,
    /// `R[t|a_i]`, one per source.
    pub per_source_reliability: Vec<ReliabilityMap>,
    /// `R_t`.
    pub overall: ReliabilityMap,
}

/// Fuses `N >= 1` transferred object features by their reliabilities.
pub fn fuse(
    transferred: &[FeatureGrid],
    reliabilities: &[ReliabilityMap],
    epsilon: f64,
    use_r_attention: bool,
) -> Result<FusionResult> {
    if transferred.is_empty() {
        return Err(Error::NoSources);
    }
    if transferred.len() != reliabilities.len() {
        return Err(mismatch("fuse", transferred.len(), reliabilities.len()));
    }
    let attention = attention_maps(reliabilities, use_r_attention)?;
    Ok(FusionResult {
        interfused: interfuse(transferred, &attention)?,
        overall: overall_reliability(reliabilities, epsilon)?,
        attention,
        per_source_reliability: reliabilities.to_vec(),
    })
}

/// Least-recently-used cache of transition matrices keyed by
/// `(source frame, target frame)`.
#[derive(Debug, Clone)]
pub struct TransitionCache {
    capacity: usize,
    clock: u64,
    entries: BTreeMap<(usize, usize), (Arc<TransitionMatrix>, u64)>,
    hits: u64,
    misses: u64,
}

impl TransitionCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            clock: 0,
            entries: BTreeMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> (u64, u64) {
        (self.hits, self.misses)
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        self.entries.contains_key(&(source, target))
    }

    pub fn get_or_try_insert<F>(&mut self, source: usize, target: usize, compute: F) -> Result<Arc<TransitionMatrix>>
    where
        F: FnOnce() -> Result<TransitionMatrix>,
    {
        self.clock += 1;
        let now = self.clock;
        if let Some((m, stamp)) = self.entries.get_mut(&(source, target)) {
            *stamp = now;
            self.hits += 1;
            return Ok(Arc::clone(m));
        }
        self.misses += 1;
        let m = Arc::new(compute()?);
        if self.entries.len() >= self.capacity {
            let oldest = self
                .entries
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(k, _)| *k)
                .expect("non-empty at capacity");
            self.entries.remove(&oldest);
        }
        self.entries.insert((source, target), (Arc::clone(&m), now));
        Ok(m)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::rng::uniform_matrix;

    fn shape(hw: usize) -> GridShape {
        GridShape::new(hw, 1, 1).unwrap()
    }

    fn grid(rows: &[&[f64]]) -> FeatureGrid {
        FeatureGrid::new(shape(rows.len()), Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn identical_target_rows_give_uniform_columns() {
        let t = grid(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let s = grid(&[&[0.3, -1.0], &[2.0, 0.5]]);
        let a = transition_from_embeddings(&t, &s, false).unwrap();
        assert_eq!(a.data.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn hand_softmax_column() {
        // logits for column 0 are [0, ln 3]
        let t = grid(&[&[0.0], &[libm::log(3.0)]]);
        let s = grid(&[&[1.0], &[0.0]]);
        let a = transition_from_embeddings(&t, &s, false).unwrap();
        assert!((a.data.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((a.data.get(1, 0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn permutation_transfer_permutes_rows() {
        let a = TransitionMatrix {
            data: Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap(),
        };
        let x = grid(&[&[1.0, 10.0], &[2.0, 20.0], &[3.0, 30.0]]);
        let y = transfer(&a, &x).unwrap();
        assert_eq!(y.data.as_slice(), &[2.0, 20.0, 3.0, 30.0, 1.0, 10.0]);
    }

    #[test]
    fn uniform_transfer_averages() {
        let a = TransitionMatrix {
            data: Matrix::from_vec(2, 2, vec![0.5; 4]).unwrap(),
        };
        let x = grid(&[&[1.0, 4.0], &[3.0, 0.0]]);
        let y = transfer(&a, &x).unwrap();
        assert_eq!(y.data.as_slice(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn transfer_matches_scalar_loop() {
        let a = TransitionMatrix {
            data: uniform_matrix(6, 6, 1),
        };
        let x = FeatureGrid::new(shape(6), uniform_matrix(6, 4, 2)).unwrap();
        let y = transfer(&a, &x).unwrap();
        for r in 0..6 {
            for c in 0..4 {
                let s: f64 = (0..6).map(|k| a.data.get(r, k) * x.data.get(k, c)).sum();
                assert!((y.data.get(r, c) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_reliability_is_one_over_epsilon() {
        let f = grid(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let r = reliability(&f, &f, 0.1).unwrap();
        assert!(r.values.iter().all(|&v| v == 1.0 / 0.1));
    }

    #[test]
    fn single_entry_difference() {
        let a = grid(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = grid(&[&[1.0, 2.0], &[3.0, 4.5]]);
        let r = reliability(&a, &b, 0.1).unwrap();
        assert!((r.values[1] - 1.0 / (0.25 + 0.1)).abs() < 1e-12);
        assert_eq!(r.values[0], 10.0);
        assert!(reliability(&a, &b, 0.0).is_err());
    }

    #[test]
    fn single_source_fusion() {
        let e = grid(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let r = ReliabilityMap::new(e.shape, vec![3.0, 10.0]).unwrap();
        let out = fuse(&[e.clone()], &[r], 0.1, true).unwrap();
        assert_eq!(out.interfused, e);
        assert!(out.attention[0].values.iter().all(|&m| m == 1.0));
        assert!((out.overall.values[0] - libm::exp(3.0 - 10.0)).abs() < 1e-15);
        assert_eq!(out.overall.values[1], 1.0);
    }

    #[test]
    fn equal_reliability_averages() {
        let e1 = grid(&[&[1.0, 3.0]]);
        let e2 = grid(&[&[3.0, 5.0]]);
        let r = ReliabilityMap::new(e1.shape, vec![4.0]).unwrap();
        let out = fuse(&[e1, e2], &[r.clone(), r], 0.1, true).unwrap();
        assert_eq!(out.attention[0].values[0], 0.5);
        assert_eq!(out.interfused.data.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn attention_hand_values() {
        let s = shape(1);
        let r1 = ReliabilityMap::new(s, vec![1.0]).unwrap();
        let r0 = ReliabilityMap::new(s, vec![0.0]).unwrap();
        let m = attention_maps(&[r1, r0], true).unwrap();
        let e = core::f64::consts::E;
        assert!((m[0].values[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((m[1].values[0] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((m[0].values[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn uniform_averaging_ablation() {
        let s = shape(1);
        let r1 = ReliabilityMap::new(s, vec![9.0]).unwrap();
        let r0 = ReliabilityMap::new(s, vec![0.0]).unwrap();
        let m = attention_maps(&[r1, r0], false).unwrap();
        assert_eq!((m[0].values[0], m[1].values[0]), (0.5, 0.5));
    }

    #[test]
    fn empty_fusion_is_an_error() {
        assert_eq!(fuse(&[], &[], 0.1, true), Err(Error::NoSources));
    }

    #[test]
    fn cache_evicts_least_recently_used() {
        let mut cache = TransitionCache::new(2);
        let mk = || {
            Ok(TransitionMatrix {
                data: Matrix::identity(1),
            })
        };
        cache.get_or_try_insert(0, 1, mk).unwrap();
        cache.get_or_try_insert(0, 2, mk).unwrap();
        cache.get_or_try_insert(0, 1, mk).unwrap();
        cache.get_or_try_insert(0, 3, mk).unwrap();
        assert!(cache.contains(0, 1));
        assert!(!cache.contains(0, 2));
        assert!(cache.contains(0, 3));
        assert_eq!(cache.stats(), (1, 3));
    }
}

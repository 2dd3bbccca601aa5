//! Independent scalar-loop implementation of transition matrices, transfer,
//! reliability and R-attention fusion, compared against the engine on tiny
//! seeded fixtures.

use relvos_core::attention::{fuse, reliability, transfer, transition_matrix};
use relvos_core::features::FeatureTransform;
use relvos_core::rng::SplitMix64;
use relvos_core::{FeatureGrid, GridShape, Matrix, TransformKind};
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-9;

type Mat = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub quantity: String,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub hw: usize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub sources: usize,
    pub checks: Vec<Check>,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

struct Fixture {
    f_t: Mat,
    f_a: Vec<Mat>,
    e_a: Vec<Mat>,
    phi_a: (Mat, Vec<f64>),
    phi_r: (Mat, Vec<f64>),
}

fn random_mat(rng: &mut SplitMix64, rows: usize, cols: usize) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.next_symmetric()).collect()).collect()
}

fn fixture(seed: u64, hw: usize, c1: usize, c2: usize, c3: usize, n: usize) -> Fixture {
    let mut rng = SplitMix64::new(seed);
    let f_t = random_mat(&mut rng, hw, c1);
    let f_a = (0..n).map(|_| random_mat(&mut rng, hw, c1)).collect();
    let e_a = (0..n).map(|_| random_mat(&mut rng, hw, c3)).collect();
    let affine = |rng: &mut SplitMix64| {
        let w = random_mat(rng, c1, c2);
        let b = (0..c2).map(|_| 0.1 * rng.next_symmetric()).collect();
        (w, b)
    };
    let phi_a = affine(&mut rng);
    let phi_r = affine(&mut rng);
    Fixture { f_t, f_a, e_a, phi_a, phi_r }
}

fn apply(f: &Mat, (w, b): &(Mat, Vec<f64>)) -> Mat {
    f.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| {
                    let mut s = b[j];
                    for (i, x) in row.iter().enumerate() {
                        s += x * w[i][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// `A[r][c] = exp(l[r][c]) / sum_r' exp(l[r'][c])` with
/// `l[r][c] = <phi(F_target)[r], phi(F_source)[c]> / sqrt(C2)`.
fn scalar_transition(target: &Mat, source: &Mat, phi: &(Mat, Vec<f64>), temperature: bool) -> Mat {
    let (pt, ps) = (apply(target, phi), apply(source, phi));
    let hw = pt.len();
    let scale = if temperature { 1.0 / (phi.1.len() as f64).sqrt() } else { 1.0 };
    let mut logits = vec![vec![0.0; hw]; hw];
    for r in 0..hw {
        for c in 0..hw {
            let mut s = 0.0;
            for k in 0..pt[r].len() {
                s += pt[r][k] * ps[c][k];
            }
            logits[r][c] = s * scale;
        }
    }
    let mut a = vec![vec![0.0; hw]; hw];
    for c in 0..hw {
        let mut denom = 0.0;
        for row in &logits {
            denom += row[c].exp();
        }
        for r in 0..hw {
            a[r][c] = logits[r][c].exp() / denom;
        }
    }
    a
}

fn scalar_matmul(a: &Mat, b: &Mat) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn deviation(a: &Mat, b: &Matrix) -> f64 {
    let mut d: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            d = d.max((v - b.get(i, j)).abs());
        }
    }
    d
}

fn deviation_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn to_grid(shape: GridShape, m: &Mat) -> FeatureGrid {
    FeatureGrid::new(shape, Matrix::from_rows(m).expect("rectangular")).expect("finite")
}

fn to_transform(kind: TransformKind, (w, b): &(Mat, Vec<f64>)) -> FeatureTransform {
    FeatureTransform {
        kind,
        weight: Matrix::from_rows(w).expect("rectangular"),
        bias: b.clone(),
    }
}

/// Compares engine and scalar pipeline on a `2x2`-cell fixture (`hw = 4`)
/// with `C2 = 3` and two annotated frames.
pub fn run(seed: u64) -> relvos_core::Result<OracleReport> {
    run_with(seed, 5, 3, 2, 2, 0.1)
}

pub fn run_with(seed: u64, c1: usize, c2: usize, c3: usize, n: usize, epsilon: f64) -> relvos_core::Result<OracleReport> {
    let shape = GridShape::new(2, 2, 1)?;
    let hw = shape.hw();
    let fx = fixture(seed, hw, c1, c2, c3, n);
    let phi_a = to_transform(TransformKind::Affinity, &fx.phi_a);
    let phi_r = to_transform(TransformKind::Reliability, &fx.phi_r);
    let f_t = to_grid(shape, &fx.f_t);
    let mut checks: Vec<Check> = Vec::new();
    let mut push = |q: String, d: f64| checks.push(Check { quantity: q, max_deviation: d });

    for temperature in [false, true] {
        let tag = if temperature { "scaled" } else { "unscaled" };
        // Engine side.
        let a_tt = transition_matrix(&f_t, &f_t, &phi_a, temperature)?;
        let self_rel = transfer(&a_tt, &phi_r.apply(&f_t)?)?;
        let mut transferred = Vec::new();
        let mut rels = Vec::new();
        // Scalar side.
        let s_tt = scalar_transition(&fx.f_t, &fx.f_t, &fx.phi_a, temperature);
        let s_self = scalar_matmul(&s_tt, &apply(&fx.f_t, &fx.phi_r));
        push(format!("A(t->t) {tag}"), deviation(&s_tt, &a_tt.data));
        let mut s_transferred = Vec::new();
        let mut s_rels = Vec::new();
        for i in 0..n {
            let f_a = to_grid(shape, &fx.f_a[i]);
            let a = transition_matrix(&f_t, &f_a, &phi_a, temperature)?;
            let e = transfer(&a, &to_grid(shape, &fx.e_a[i]))?;
            let r = reliability(&transfer(&a, &phi_r.apply(&f_a)?)?, &self_rel, epsilon)?;

            let s_a = scalar_transition(&fx.f_t, &fx.f_a[i], &fx.phi_a, temperature);
            let s_e = scalar_matmul(&s_a, &fx.e_a[i]);
            let s_ra = scalar_matmul(&s_a, &apply(&fx.f_a[i], &fx.phi_r));
            let s_r: Vec<f64> = (0..hw)
                .map(|p| {
                    let mut worst: f64 = 0.0;
                    for c in 0..c2 {
                        worst = worst.max((s_ra[p][c] - s_self[p][c]).powi(2));
                    }
                    1.0 / (worst + epsilon)
                })
                .collect();
            push(format!("A(a{i}->t) {tag}"), deviation(&s_a, &a.data));
            push(format!("E(t|a{i}) {tag}"), deviation(&s_e, &e.data));
            push(format!("R(t|a{i}) {tag}"), deviation_vec(&s_r, &r.values));
            transferred.push(e);
            rels.push(r);
            s_transferred.push(s_e);
            s_rels.push(s_r);
        }
        let fused = fuse(&transferred, &rels, epsilon, true)?;
        let mut s_m = vec![vec![0.0; hw]; n];
        let mut s_g = vec![vec![0.0; c3]; hw];
        let mut s_overall = vec![0.0; hw];
        for p in 0..hw {
            let denom: f64 = (0..n).map(|i| s_rels[i][p].exp()).sum();
            for i in 0..n {
                s_m[i][p] = s_rels[i][p].exp() / denom;
                for ch in 0..c3 {
                    s_g[p][ch] += s_m[i][p] * s_transferred[i][p][ch];
                }
            }
            s_overall[p] = (0..n)
                .map(|i| (s_rels[i][p] - 1.0 / epsilon).exp())
                .fold(f64::NEG_INFINITY, f64::max);
        }
        for i in 0..n {
            push(format!("M(t|a{i}) {tag}"), deviation_vec(&s_m[i], &fused.attention[i].values));
        }
        push(format!("G(t) {tag}"), deviation(&s_g, &fused.interfused.data));
        push(format!("R(t) {tag}"), deviation_vec(&s_overall, &fused.overall.values));
    }
    let max_deviation = checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
    Ok(OracleReport {
        seed,
        hw,
        c1,
        c2,
        c3,
        sources: n,
        checks,
        max_deviation,
        tolerance: TOLERANCE,
    })
}

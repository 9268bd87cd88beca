// Shared generators and plain-arithmetic oracles for the integration tests.
// Nothing here calls into the library's graph or solver code.
#![allow(dead_code)]

use casa_refine::matrix::DenseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nonnegative, exactly symmetric, with roughly `1 - density` zeros.
pub fn random_affinity(rng: &mut ChaCha8Rng, n: usize, density: f64) -> DenseMatrix {
    let mut s = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = if rng.random::<f64>() < density { rng.random_range(0.0..2.0) } else { 0.0 };
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

/// Nonnegative with every off-diagonal entry positive, so the graph is connected.
pub fn connected_affinity(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let mut s = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.05..1.0);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    s
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn to_na(s: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(s.n(), s.n(), |i, j| s.get(i, j))
}

/// D − S for symmetric S, self-loops included on both sides.
pub fn oracle_laplacian(s: &DenseMatrix) -> DMatrix<f64> {
    let n = s.n();
    let mut l = -to_na(s);
    for i in 0..n {
        let d: f64 = (0..n).map(|j| s.get(i, j)).sum();
        l[(i, i)] += d;
    }
    l
}

pub fn oracle_weights(m0: &[f64], alpha: f64, floor: f64) -> Vec<f64> {
    m0.iter()
        .map(|&m| {
            let s = 1.0 / (1.0 + (-alpha * m).exp());
            (s * s).max(floor)
        })
        .collect()
}

/// `Λ + λL` as a nalgebra matrix.
pub fn oracle_system(w: &[f64], s: &DenseMatrix, lambda: f64) -> DMatrix<f64> {
    let mut a = oracle_laplacian(s) * lambda;
    for (i, wi) in w.iter().enumerate() {
        a[(i, i)] += wi;
    }
    a
}

pub fn oracle_objective(m: &[f64], m0: &[f64], w: &[f64], s: &DenseMatrix, lambda: f64) -> f64 {
    let n = m.len();
    let mut fid = 0.0;
    for i in 0..n {
        fid += w[i] * (m[i] - m0[i]) * (m[i] - m0[i]);
    }
    let mut smooth = 0.0;
    for i in 0..n {
        for j in 0..n {
            smooth += s.get(i, j) * (m[i] - m[j]) * (m[i] - m[j]);
        }
    }
    fid + lambda * 0.5 * smooth
}

pub fn oracle_gradient(m: &[f64], m0: &[f64], w: &[f64], s: &DenseMatrix, lambda: f64) -> Vec<f64> {
    let n = m.len();
    (0..n)
        .map(|i| {
            let mut lm = 0.0;
            for j in 0..n {
                lm += s.get(i, j) * (m[i] - m[j]);
            }
            2.0 * w[i] * (m[i] - m0[i]) + 2.0 * lambda * lm
        })
        .collect()
}

pub fn oracle_solve(w: &[f64], s: &DenseMatrix, lambda: f64, m0: &[f64]) -> Vec<f64> {
    let a = oracle_system(w, s, lambda);
    let b = DVector::from_iterator(m0.len(), w.iter().zip(m0).map(|(w, m)| w * m));
    a.lu().solve(&b).expect("oracle system singular").iter().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

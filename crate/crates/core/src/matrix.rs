//! Square matrices in dense and CSR form, plus the small amount of dense
//! factorization the solvers need.
//!
//! Matvecs parallelize over rows only; every row is reduced sequentially, so
//! results are bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per rayon task in matvecs. Below this the sequential loop wins.
const PAR_MIN_ROWS: usize = 256;

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {n}x{n} = {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let row_dot = |(i, yi): (usize, &mut f64)| *yi = dot(self.row(i), x);
        if self.n >= PAR_MIN_ROWS {
            y.par_iter_mut().enumerate().for_each(row_dot);
        } else {
            y.iter_mut().enumerate().for_each(row_dot);
        }
    }
}

/// Compressed sparse rows, square.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Keeps the entries of `dense` for which `keep(i, j, value)` holds.
    pub fn from_dense_filtered(
        dense: &DenseMatrix,
        mut keep: impl FnMut(usize, usize, f64) -> bool,
    ) -> Self {
        let n = dense.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if keep(i, j, v) {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let row_dot = |(i, yi): (usize, &mut f64)| {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            *yi = acc;
        };
        if self.n >= PAR_MIN_ROWS {
            y.par_iter_mut().enumerate().for_each(row_dot);
        } else {
            y.iter_mut().enumerate().for_each(row_dot);
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d.set(i, j, v);
            }
        }
        d
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // four fixed lanes: vectorizes and stays deterministic
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.n();
        let mut l = a.as_slice().to_vec();
        for j in 0..n {
            let d = l[j * n + j] - dot(&l[j * n..j * n + j], &l[j * n..j * n + j]);
            if !(d.is_finite() && d > 0.0) {
                let diag = a.diagonal();
                let min_diag = diag.iter().cloned().fold(f64::INFINITY, f64::min);
                let max_diag = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                return Err(Error::Numerical(format!(
                    "Cholesky pivot {j} is {d:e}; matrix is not positive definite \
                     (diagonal range [{min_diag:e}, {max_diag:e}])"
                )));
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            let (head, tail) = l.split_at_mut((j + 1) * n);
            let row_j = &head[j * n..j * n + j];
            let update = |row_i: &mut [f64]| row_i[j] = (row_i[j] - dot(&row_i[..j], row_j)) / djj;
            if j >= PAR_MIN_ROWS && tail.len() >= PAR_MIN_ROWS * n {
                tail.par_chunks_exact_mut(n).for_each(update);
            } else {
                tail.chunks_exact_mut(n).for_each(update);
            }
        }
        // clear the strict upper triangle so `lower` holds only L
        for i in 0..n {
            for v in &mut l[i * n + i + 1..(i + 1) * n] {
                *v = 0.0;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let acc = (i + 1..n).fold(y[i], |acc, k| acc - self.lower[k * n + i] * y[k]);
            y[i] = acc / self.lower[i * n + i];
        }
        y
    }

    /// Reciprocal of the squared ratio of extreme factor diagonals, a cheap
    /// lower bound proxy for 1/cond(A).
    pub fn rcond_estimate(&self) -> f64 {
        let diag = (0..self.n).map(|i| self.lower[i * self.n + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (lo / hi).powi(2)
    }
}

/// LU factorization with partial pivoting, for the non-symmetric ablation path.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.n();
        let mut lu = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pv.is_finite() && pv > 0.0) {
                return Err(Error::Numerical(format!("LU pivot {k} is {pv:e}; matrix is singular")));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let acc = dot(&self.lu[i * n..i * n + i], &y[..i]);
            y[i] -= acc;
        }
        for i in (0..n).rev() {
            let acc = dot(&self.lu[i * n + i + 1..(i + 1) * n], &y[i + 1..]);
            y[i] = (y[i] - acc) / self.lu[i * n + i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DenseMatrix {
        // diagonally dominant symmetric
        DenseMatrix::from_fn(n, |i, j| {
            if i == j {
                n as f64 + 1.0
            } else {
                1.0 / (1.0 + (i + j) as f64)
            }
        })
    }

    #[test]
    fn cholesky_solves_spd() {
        let a = spd(9);
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 3.5).collect();
        let b = a.matvec(&x);
        let got = Cholesky::factor(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a = DenseMatrix::from_row_major(3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0])
            .unwrap();
        let x = [1.0, -2.0, 0.5];
        let b = a.matvec(&x);
        let got = Lu::factor(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn csr_matches_dense() {
        let a = spd(300);
        let csr = CsrMatrix::from_dense_filtered(&a, |_, _, v| v != 0.0);
        let x: Vec<f64> = (0..300).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; 300];
        csr.matvec_into(&x, &mut y);
        // different summation order, so compare with a tolerance
        for (u, v) in y.iter().zip(a.matvec(&x)) {
            assert!((u - v).abs() < 1e-12 * v.abs().max(1.0));
        }
        assert_eq!(csr.to_dense(), a);
        assert_eq!(csr.diagonal(), a.diagonal());
    }
}

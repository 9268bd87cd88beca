//! The patch graph: degrees, the combinatorial Laplacian `L = D - S` and the
//! two equivalent forms of its quadratic energy.

use crate::attention::AffinityMatrix;
use crate::error::{Error, Result};
use crate::io::LARGE_GRAPH_NODES;
use crate::matrix::{dot, CsrMatrix, DenseMatrix};

/// Relative cutoff used by opt-in sparsification.
pub const SPARSIFY_RELATIVE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    /// Dense below [`LARGE_GRAPH_NODES`] nodes, CSR otherwise.
    #[default]
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LaplacianOptions {
    pub storage: Storage,
    /// Drop `S(i, j)` when it is below `SPARSIFY_RELATIVE` times the largest
    /// entry of both row `i` and row `j`. This is an approximation.
    pub sparsify: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum LaplacianMatrix {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

/// Immutable graph Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    matrix: LaplacianMatrix,
    symmetric: bool,
}

impl GraphLaplacian {
    pub fn nodes(&self) -> usize {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.n(),
            LaplacianMatrix::Sparse(m) => m.n(),
        }
    }

    /// Side length of the square patch grid, when `nodes` is a perfect square.
    pub fn side(&self) -> Option<usize> {
        let n = self.nodes();
        let s = (n as f64).sqrt().round() as usize;
        (s * s == n).then_some(s)
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.matrix, LaplacianMatrix::Sparse(_))
    }

    /// False only for the Laplacian of an unsymmetrized affinity (ablation).
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.get(i, j),
            LaplacianMatrix::Sparse(m) => m.get(i, j),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.diagonal(),
            LaplacianMatrix::Sparse(m) => m.diagonal(),
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.matvec_into(x, y),
            LaplacianMatrix::Sparse(m) => m.matvec_into(x, y),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nodes()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.clone(),
            LaplacianMatrix::Sparse(m) => m.to_dense(),
        }
    }

    /// Visits the stored entries of row `i`.
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.matrix {
            LaplacianMatrix::Dense(m) => m.row(i).iter().enumerate().for_each(|(j, &v)| f(j, v)),
            LaplacianMatrix::Sparse(m) => m.row(i).for_each(|(j, v)| f(j, v)),
        }
    }
}

/// Row sums of a symmetric affinity matrix.
pub fn degree(s: &AffinityMatrix) -> Result<Vec<f64>> {
    if !s.is_symmetric() {
        return Err(Error::Contract("degree requires a symmetric affinity matrix".into()));
    }
    Ok(row_sums(s.weights()))
}

fn row_sums(w: &DenseMatrix) -> Vec<f64> {
    (0..w.n()).map(|i| w.row(i).iter().sum()).collect()
}

/// `L = diag(degree(S)) - S` with automatic storage.
pub fn laplacian(s: &AffinityMatrix) -> Result<GraphLaplacian> {
    laplacian_with(s, LaplacianOptions::default())
}

pub fn laplacian_with(s: &AffinityMatrix, opts: LaplacianOptions) -> Result<GraphLaplacian> {
    if !s.is_symmetric() {
        return Err(Error::Contract("laplacian requires a symmetric affinity matrix".into()));
    }
    Ok(build(s.weights(), opts, true))
}

/// `L = diag(row sums of S) - S` for an affinity that may be asymmetric. Only
/// meaningful for the no-symmetrize ablation; the result is not PSD in general.
pub fn directed_laplacian(s: &AffinityMatrix, opts: LaplacianOptions) -> GraphLaplacian {
    build(s.weights(), opts, s.is_symmetric())
}

fn build(w: &DenseMatrix, opts: LaplacianOptions, symmetric: bool) -> GraphLaplacian {
    let n = w.n();
    let sparse = match opts.storage {
        Storage::Auto => n >= LARGE_GRAPH_NODES || opts.sparsify,
        Storage::Dense => false,
        Storage::Sparse => true,
    };

    let kept: Option<DenseMatrix> = opts.sparsify.then(|| {
        let row_max: Vec<f64> = (0..n)
            .map(|i| w.row(i).iter().cloned().fold(0.0, f64::max))
            .collect();
        DenseMatrix::from_fn(n, |i, j| {
            let v = w.get(i, j);
            let cut = SPARSIFY_RELATIVE * row_max[i].min(row_max[j]);
            if i == j || v >= cut {
                v
            } else {
                0.0
            }
        })
    });
    let w = kept.as_ref().unwrap_or(w);
    let deg = row_sums(w);

    let lap = DenseMatrix::from_fn(n, |i, j| {
        if i == j {
            deg[i] - w.get(i, i)
        } else {
            -w.get(i, j)
        }
    });
    let matrix = if sparse {
        LaplacianMatrix::Sparse(CsrMatrix::from_dense_filtered(&lap, |i, j, v| {
            i == j || v != 0.0
        }))
    } else {
        LaplacianMatrix::Dense(lap)
    };
    GraphLaplacian { matrix, symmetric }
}

/// `xᵀ L x`, evaluated through the matrix.
pub fn quadratic_form(l: &GraphLaplacian, x: &[f64]) -> Result<f64> {
    if x.len() != l.nodes() {
        return Err(Error::Shape(format!(
            "vector of length {} against a {}-node Laplacian",
            x.len(),
            l.nodes()
        )));
    }
    Ok(dot(x, &l.matvec(x)))
}

/// `½ Σᵢ Σⱼ S(i,j) (xᵢ − xⱼ)²`, the edge-wise form of the same energy.
pub fn pairwise_energy(s: &AffinityMatrix, x: &[f64]) -> Result<f64> {
    let w = s.weights();
    if x.len() != w.n() {
        return Err(Error::Shape(format!(
            "vector of length {} against a {}-node affinity",
            x.len(),
            w.n()
        )));
    }
    let mut total = 0.0;
    for i in 0..w.n() {
        let row = w.row(i);
        let xi = x[i];
        total += row
            .iter()
            .zip(x)
            .map(|(s, xj)| s * (xi - xj) * (xi - xj))
            .sum::<f64>();
    }
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aff(n: usize, v: Vec<f64>) -> AffinityMatrix {
        AffinityMatrix::new(DenseMatrix::from_row_major(n, v).unwrap()).unwrap()
    }

    #[test]
    fn degree_small() {
        assert_eq!(degree(&aff(2, vec![0., 1., 1., 0.])).unwrap(), vec![1.0, 1.0]);
        assert_eq!(degree(&aff(3, vec![0.0; 9])).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn degree_rejects_asymmetric() {
        let raw = DenseMatrix::from_row_major(2, vec![0., 2., 0., 0.]).unwrap();
        let s = crate::attention::symmetrize(&raw, true).unwrap();
        assert!(matches!(degree(&s), Err(Error::Contract(_))));
        assert!(matches!(laplacian(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn laplacian_pair_and_chain() {
        let l = laplacian(&aff(2, vec![0., 1., 1., 0.])).unwrap();
        assert_eq!(l.to_dense().as_slice(), &[1., -1., -1., 1.]);

        let l = laplacian(&aff(3, vec![0., 1., 0., 1., 0., 1., 0., 1., 0.])).unwrap();
        assert_eq!(
            l.to_dense().as_slice(),
            &[1., -1., 0., -1., 2., -1., 0., -1., 1.]
        );
    }

    #[test]
    fn self_loops_do_not_enter_laplacian() {
        let l = laplacian(&aff(2, vec![5., 1., 1., 3.])).unwrap();
        assert_eq!(l.to_dense().as_slice(), &[1., -1., -1., 1.]);
    }

    #[test]
    fn quadratic_form_examples() {
        let s = aff(2, vec![0., 1., 1., 0.]);
        let l = laplacian(&s).unwrap();
        assert_eq!(quadratic_form(&l, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(pairwise_energy(&s, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(quadratic_form(&l, &[3.5, 3.5]).unwrap(), 0.0);
        assert!(matches!(quadratic_form(&l, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn sparse_storage_agrees() {
        let n = 20;
        let w = DenseMatrix::from_fn(n, |i, j| if i.abs_diff(j) <= 2 { 1.0 / (1 + i + j) as f64 } else { 0.0 });
        let s = AffinityMatrix::new(w).unwrap();
        let dense = laplacian_with(&s, LaplacianOptions { storage: Storage::Dense, sparsify: false }).unwrap();
        let sparse = laplacian_with(&s, LaplacianOptions { storage: Storage::Sparse, sparsify: false }).unwrap();
        assert!(sparse.is_sparse());
        assert_eq!(sparse.to_dense(), dense.to_dense());
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        for (a, b) in dense.matvec(&x).iter().zip(sparse.matvec(&x)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sparsify_keeps_rows_balanced() {
        let n = 6;
        let w = DenseMatrix::from_fn(n, |i, j| if i == j { 0.0 } else if (i + j) % 3 == 0 { 1e-9 } else { 0.5 });
        let s = AffinityMatrix::new(w).unwrap();
        let l = laplacian_with(&s, LaplacianOptions { storage: Storage::Auto, sparsify: true }).unwrap();
        assert!(l.is_sparse());
        let d = l.to_dense();
        assert!(d.is_symmetric());
        for i in 0..n {
            assert!(d.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        assert_eq!(l.get(1, 2), 0.0);
        assert_eq!(l.get(0, 1), -0.5);
    }
}

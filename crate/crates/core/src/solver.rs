//! The refinement objective
//!
//! ```text
//! J(m) = (m - m0)ᵀ Λ (m - m0) + λ mᵀ L m
//! ```
//!
//! and its minimizer, the solution of `(Λ + λL) m = Λ m0`. The system is
//! symmetric positive definite whenever `L` comes from a symmetric affinity,
//! so it is solved either by a dense Cholesky factorization or by
//! Jacobi-preconditioned conjugate gradients. The no-symmetrize ablation gives
//! a nonsymmetric (but strictly row diagonally dominant) system, which is
//! routed to LU or Gauss-Seidel instead.
//!
//! All arithmetic is `f64` and every reduction runs in a fixed order, so
//! repeated solves are bit-identical.

use serde::Serialize;

use crate::attention::{confidence, symmetrize, ConfidenceWeights, SaliencyMap};
use crate::error::{Error, Result, StageExt};
use crate::graph::{directed_laplacian, laplacian_with, GraphLaplacian, LaplacianOptions};
use crate::io::{RefineConfig, SolverChoice};
use crate::matrix::{dot, norm2, Cholesky, DenseMatrix, Lu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dense,
    Cg,
    /// Dense LU, used when the Laplacian is not symmetric.
    DenseLu,
    /// Gauss-Seidel sweeps, used when the Laplacian is not symmetric.
    GaussSeidel,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Dense => "dense",
            SolverKind::Cg => "cg",
            SolverKind::DenseLu => "dense_lu",
            SolverKind::GaussSeidel => "gauss_seidel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub m_star: SaliencyMap,
    pub objective_initial: f64,
    pub objective_final: f64,
    pub solver_used: SolverKind,
    /// Iterations (CG steps or Gauss-Seidel sweeps); 0 for direct solves.
    pub cg_iterations: usize,
    /// `‖(Λ + λL) m* − Λ m0‖₂`
    pub residual_norm: f64,
    /// Always true for direct solves.
    pub converged: bool,
}

fn check_dims(m: &[f64], m0: &SaliencyMap, w: &ConfidenceWeights, l: &GraphLaplacian) -> Result<()> {
    let n = m0.len();
    if m.len() != n || w.len() != n || l.nodes() != n {
        return Err(Error::Shape(format!(
            "dimension mismatch: m={}, m0={}, weights={}, laplacian={}",
            m.len(),
            n,
            w.len(),
            l.nodes()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be finite and ≥ 0, got {lambda}")));
    }
    Ok(())
}

/// Fidelity `(m − m0)ᵀΛ(m − m0)` and smoothness `mᵀLm`, separately.
pub fn objective_terms(
    m: &[f64],
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
) -> Result<(f64, f64)> {
    check_dims(m, m0, weights, l)?;
    let fidelity = m
        .iter()
        .zip(m0.values())
        .zip(weights.diag())
        .map(|((x, x0), w)| w * (x - x0) * (x - x0))
        .sum();
    let smoothness = dot(m, &l.matvec(m));
    Ok((fidelity, smoothness))
}

pub fn objective(
    m: &[f64],
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let (fidelity, smoothness) = objective_terms(m, m0, weights, l)?;
    Ok(fidelity + lambda * smoothness)
}

/// `∇J(m) = 2Λ(m − m0) + λ(L + Lᵀ)m`, which is `2Λ(m − m0) + 2λLm` for symmetric `L`.
pub fn gradient(
    m: &[f64],
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_dims(m, m0, weights, l)?;
    let lm = l.matvec(m);
    let sym_lm: Vec<f64> = if l.is_symmetric() {
        lm.iter().map(|v| 2.0 * v).collect()
    } else {
        let ltm = l.to_dense().transpose().matvec(m);
        lm.iter().zip(&ltm).map(|(a, b)| a + b).collect()
    };
    Ok(m.iter()
        .zip(m0.values())
        .zip(weights.diag())
        .zip(&sym_lm)
        .map(|(((x, x0), w), s)| 2.0 * w * (x - x0) + lambda * s)
        .collect())
}

/// The system `(Λ + λL) x = Λ m0`.
struct System<'a> {
    weights: &'a [f64],
    l: &'a GraphLaplacian,
    lambda: f64,
    rhs: Vec<f64>,
}

impl<'a> System<'a> {
    fn new(m0: &SaliencyMap, weights: &'a ConfidenceWeights, l: &'a GraphLaplacian, lambda: f64) -> Self {
        let rhs = weights.diag().iter().zip(m0.values()).map(|(w, x)| w * x).collect();
        Self {
            weights: weights.diag(),
            l,
            lambda,
            rhs,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.l.matvec_into(x, out);
        for ((o, w), xi) in out.iter_mut().zip(self.weights).zip(x) {
            *o = w * xi + self.lambda * *o;
        }
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        self.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        self.l
            .diagonal()
            .iter()
            .zip(self.weights)
            .map(|(d, w)| w + self.lambda * d)
            .collect()
    }

    fn dense(&self) -> DenseMatrix {
        let mut a = self.l.to_dense().scale(self.lambda);
        for (i, w) in self.weights.iter().enumerate() {
            a.set(i, i, a.get(i, i) + w);
        }
        a
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    x: Vec<f64>,
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    lambda: f64,
    solver_used: SolverKind,
    iterations: usize,
    residual_norm: f64,
    converged: bool,
) -> Result<RefineResult> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("solution entry {i} is not finite")));
    }
    let objective_initial = objective(m0.values(), m0, weights, l, lambda)?;
    let objective_final = objective(&x, m0, weights, l, lambda)?;
    Ok(RefineResult {
        m_star: SaliencyMap::new(m0.side(), x)?,
        objective_initial,
        objective_final,
        solver_used,
        cg_iterations: iterations,
        residual_norm,
        converged,
    })
}

/// Direct solve: Cholesky for symmetric `L`, partial-pivoting LU otherwise.
/// One step of iterative refinement follows the factorization.
pub fn solve_dense(
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    lambda: f64,
) -> Result<RefineResult> {
    check_lambda(lambda)?;
    check_dims(m0.values(), m0, weights, l)?;
    let kind = if l.is_symmetric() {
        SolverKind::Dense
    } else {
        SolverKind::DenseLu
    };
    if lambda == 0.0 {
        // Λ⁻¹Λm0
        return finish(m0.values().to_vec(), m0, weights, l, lambda, kind, 0, 0.0, true);
    }
    let sys = System::new(m0, weights, l, lambda);
    let a = sys.dense();
    enum Factor {
        Chol(Cholesky),
        Lu(Lu),
    }
    let factor = if l.is_symmetric() {
        let chol = Cholesky::factor(&a)?;
        log::debug!("cholesky rcond estimate {:e}", chol.rcond_estimate());
        Factor::Chol(chol)
    } else {
        Factor::Lu(Lu::factor(&a)?)
    };
    let solve = |b: &[f64]| match &factor {
        Factor::Chol(f) => f.solve(b),
        Factor::Lu(f) => f.solve(b),
    };
    let mut x = solve(&sys.rhs);
    let r = sys.residual(&x);
    let dx = solve(&r);
    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    let residual = norm2(&sys.residual(&x));
    finish(x, m0, weights, l, lambda, kind, 0, residual, true)
}

/// Iterative solve warm-started at `m0`: Jacobi-preconditioned CG for
/// symmetric `L`, Gauss-Seidel otherwise. Stops once
/// `‖b − Ax‖₂ ≤ tol · ‖Λm0‖₂`. Without convergence the best iterate seen is
/// returned with `converged == false`.
pub fn solve_cg(
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RefineResult> {
    check_lambda(lambda)?;
    check_dims(m0.values(), m0, weights, l)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Parameter(format!("cg tolerance must be > 0, got {tol}")));
    }
    let sys = System::new(m0, weights, l, lambda);
    if l.is_symmetric() {
        let (x, iters, res, ok) = pcg(&sys, m0.values().to_vec(), tol, max_iter);
        finish(x, m0, weights, l, lambda, SolverKind::Cg, iters, res, ok)
    } else {
        let (x, iters, res, ok) = gauss_seidel(&sys, m0.values().to_vec(), tol, max_iter);
        finish(x, m0, weights, l, lambda, SolverKind::GaussSeidel, iters, res, ok)
    }
}

fn pcg(sys: &System, mut x: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, f64, bool) {
    let n = x.len();
    let inv_diag: Vec<f64> = sys.diagonal().iter().map(|d| 1.0 / d).collect();
    let target = tol * norm2(&sys.rhs);

    let mut r = sys.residual(&x);
    let mut res = norm2(&r);
    let mut best = (x.clone(), res);
    if res <= target {
        return (x, 0, res, true);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for k in 1..=max_iter {
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        res = norm2(&r);
        if res <= target {
            // the recurrence drifts; confirm against the true residual
            r = sys.residual(&x);
            res = norm2(&r);
            if res < best.1 {
                best = (x.clone(), res);
            }
            if res <= target {
                return (x, k, res, true);
            }
            z.iter_mut().zip(&r).zip(&inv_diag).for_each(|((z, r), d)| *z = r * d);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        if res < best.1 {
            best = (x.clone(), res);
        }
        z.iter_mut().zip(&r).zip(&inv_diag).for_each(|((z, r), d)| *z = r * d);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let true_res = norm2(&sys.residual(&best.0));
    (best.0, max_iter, true_res, false)
}

fn gauss_seidel(sys: &System, mut x: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, f64, bool) {
    let n = x.len();
    let diag = sys.diagonal();
    let target = tol * norm2(&sys.rhs);
    let mut res = norm2(&sys.residual(&x));
    let mut best = (x.clone(), res);
    if res <= target {
        return (x, 0, res, true);
    }
    for sweep in 1..=max_iter {
        for i in 0..n {
            let mut off = 0.0;
            sys.l.for_each_in_row(i, |j, v| {
                if j != i {
                    off += v * x[j];
                }
            });
            x[i] = (sys.rhs[i] - sys.lambda * off) / diag[i];
        }
        res = norm2(&sys.residual(&x));
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= target {
            return (x, sweep, res, true);
        }
    }
    (best.0, max_iter, best.1, false)
}

/// Solves with the solver chosen by `config` (auto resolves by graph size).
pub fn solve_with_config(
    m0: &SaliencyMap,
    weights: &ConfidenceWeights,
    l: &GraphLaplacian,
    config: &RefineConfig,
) -> Result<RefineResult> {
    let n = m0.len();
    match config.solver.resolve(n) {
        SolverChoice::Cg => solve_cg(
            m0,
            weights,
            l,
            config.lambda,
            config.cg_tol,
            config.cg_max_iter_for(n),
        ),
        _ => solve_dense(m0, weights, l, config.lambda),
    }
}

/// Full refinement of one branch: confidence weights from `m0`, symmetrized
/// affinity from `self_attention`, Laplacian, then the solve.
pub fn refine(
    m0: &SaliencyMap,
    self_attention: &DenseMatrix,
    config: &RefineConfig,
) -> Result<RefineResult> {
    config.validate()?;
    if self_attention.n() != m0.len() {
        return Err(Error::Shape(format!(
            "self-attention is {0}x{0} but the saliency map has {1} patches",
            self_attention.n(),
            m0.len()
        )));
    }
    let weights = confidence(
        m0,
        config.alpha,
        config.ablation_uniform_weights,
        config.lambda_floor,
    )
    .stage("confidence")?;
    let affinity = symmetrize(self_attention, config.ablation_no_symmetrize).stage("symmetrize")?;
    let opts = LaplacianOptions {
        sparsify: config.sparsify,
        ..Default::default()
    };
    let l = if affinity.is_symmetric() {
        laplacian_with(&affinity, opts).stage("laplacian")?
    } else {
        directed_laplacian(&affinity, opts)
    };
    solve_with_config(m0, &weights, &l, config).stage("solve")
}

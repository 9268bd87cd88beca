//! Preparing attention tensors for refinement: stack averaging, corner-aligned
//! bilinear upsampling, flattening, affinity symmetrization and the sigmoid
//! confidence weights.

use crate::error::{Error, Result};
use crate::io::DenseArray;
use crate::matrix::DenseMatrix;

/// A square per-patch saliency field stored row-major, `side * side` long.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Vec<f64>,
    side: usize,
}

impl SaliencyMap {
    pub fn new(side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::Shape(format!(
                "saliency map of side {side} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite saliency at index {i}")));
        }
        Ok(Self { values, side })
    }

    /// Wraps a vector of length `n` where `n` must be a perfect square.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        let side = (values.len() as f64).sqrt().round() as usize;
        Self::new(side, values)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Reshape back to a `side x side` float64 array.
    pub fn to_array(&self) -> DenseArray {
        DenseArray::from_f64(vec![self.side, self.side], self.values.clone())
            .expect("side*side invariant")
    }
}

/// Symmetric (unless built for the no-symmetrize ablation) nonnegative patch affinities.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    weights: DenseMatrix,
    symmetric: bool,
}

impl AffinityMatrix {
    /// Validates that `weights` is symmetric, finite and nonnegative.
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        check_nonnegative(&weights)?;
        if !weights.is_symmetric() {
            return Err(Error::Contract("affinity matrix is not symmetric".into()));
        }
        Ok(Self {
            weights,
            symmetric: true,
        })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn nodes(&self) -> usize {
        self.weights.n()
    }

    /// False only for affinities produced with the symmetrization ablation.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Parameter(format!("scale must be finite and ≥ 0, got {c}")));
        }
        Ok(Self {
            weights: self.weights.scale(c),
            symmetric: self.symmetric,
        })
    }
}

/// Diagonal of the confidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceWeights {
    diag: Vec<f64>,
}

impl ConfidenceWeights {
    /// Explicit weights; each must lie in (0, 1].
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if let Some(i) = diag.iter().position(|&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::Data(format!(
                "confidence weight {i} is {} (must be in (0, 1])",
                diag[i]
            )));
        }
        Ok(Self { diag })
    }

    pub fn uniform(n: usize) -> Self {
        Self { diag: vec![1.0; n] }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }
}

fn check_nonnegative(m: &DenseMatrix) -> Result<()> {
    if let Some(k) = m.as_slice().iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        let n = m.n();
        return Err(Error::Data(format!(
            "affinity entry ({}, {}) is {} (must be finite and ≥ 0)",
            k / n,
            k % n,
            m.as_slice()[k]
        )));
    }
    Ok(())
}

/// Elementwise mean over the leading axis of a `B x r x r` stack. A rank-2
/// input is treated as a stack of one.
pub fn average_stack(stack: &DenseArray) -> Result<DenseArray> {
    let (b, rows, cols) = match *stack.shape() {
        [rows, cols] => (1, rows, cols),
        [b, rows, cols] => (b, rows, cols),
        ref s => {
            return Err(Error::Shape(format!("expected a B x r x r stack, got shape {s:?}")))
        }
    };
    if b == 0 {
        return Err(Error::EmptyStack);
    }
    let data = stack.to_f64_vec();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite attention value at flat index {i}")));
    }
    let plane = rows * cols;
    let mut mean = vec![0.0; plane];
    for slice in data.chunks_exact(plane) {
        for (m, v) in mean.iter_mut().zip(slice) {
            *m += v;
        }
    }
    let inv = b as f64;
    mean.iter_mut().for_each(|m| *m /= inv);
    DenseArray::from_f64(vec![rows, cols], mean)
}

/// Corner-aligned bilinear upsampling of a square map by an integer factor.
///
/// Output pixel `(i, j)` samples the input at `(i, j) * (r - 1) / (R - 1)`, so
/// the four corners are reproduced exactly and every output value is a convex
/// combination of input values.
pub fn upsample(map: &DenseArray, gamma: usize) -> Result<DenseArray> {
    if gamma < 1 {
        return Err(Error::Parameter(format!("upsampling factor must be ≥ 1, got {gamma}")));
    }
    let r = square_side(map)?;
    let src = map.to_f64_vec();
    if gamma == 1 {
        return DenseArray::from_f64(vec![r, r], src);
    }
    let big = gamma * r;
    let taps = axis_taps(r, big);
    let mut out = Vec::with_capacity(big * big);
    for &(y0, y1, wy) in &taps {
        for &(x0, x1, wx) in &taps {
            let top = lerp(src[y0 * r + x0], src[y0 * r + x1], wx);
            let bottom = lerp(src[y1 * r + x0], src[y1 * r + x1], wx);
            out.push(lerp(top, bottom, wy));
        }
    }
    DenseArray::from_f64(vec![big, big], out)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        return a;
    }
    // clamp away rounding so the result never leaves [min(a,b), max(a,b)]
    ((1.0 - t) * a + t * b).clamp(a.min(b), a.max(b))
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    if src == 1 {
        return vec![(0, 0, 0.0); dst];
    }
    let scale = (src - 1) as f64 / (dst - 1) as f64;
    (0..dst)
        .map(|i| {
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn square_side(map: &DenseArray) -> Result<usize> {
    match *map.shape() {
        [r, c] if r == c => Ok(r),
        ref s => Err(Error::Shape(format!("expected a square 2-D map, got shape {s:?}"))),
    }
}

/// Row-major flattening of a square map.
pub fn flatten(map: &DenseArray) -> Result<SaliencyMap> {
    let side = square_side(map)?;
    SaliencyMap::new(side, map.to_f64_vec())
}

/// `(S + Sᵀ) / 2`, or `S` itself when `skip` is set (the no-symmetrize ablation).
pub fn symmetrize(s: &DenseMatrix, skip: bool) -> Result<AffinityMatrix> {
    check_nonnegative(s)?;
    if skip {
        let symmetric = s.is_symmetric();
        return Ok(AffinityMatrix {
            weights: s.clone(),
            symmetric,
        });
    }
    let n = s.n();
    let mut out = DenseMatrix::zeros(n);
    for i in 0..n {
        out.set(i, i, s.get(i, i));
        for j in i + 1..n {
            let v = 0.5 * (s.get(i, j) + s.get(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(AffinityMatrix {
        weights: out,
        symmetric: true,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(floor, sigmoid(alpha * m0[i])^2)` per patch, or all ones under the
/// uniform-weights ablation.
pub fn confidence(
    m0: &SaliencyMap,
    alpha: f64,
    ablation_uniform: bool,
    floor: f64,
) -> Result<ConfidenceWeights> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::Parameter(format!("confidence floor must be in (0, 1], got {floor}")));
    }
    if ablation_uniform {
        return Ok(ConfidenceWeights::uniform(m0.len()));
    }
    let diag = m0
        .values()
        .iter()
        .map(|&m| sigmoid(alpha * m).powi(2).max(floor))
        .collect();
    Ok(ConfidenceWeights { diag })
}

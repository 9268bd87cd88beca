//! Dual-branch mask construction: each branch's cross-attention is averaged,
//! upsampled and refined against its own self-attention graph, the two refined
//! maps are fused by elementwise max, and the fused map is thresholded.

use std::time::Instant;

use serde::Serialize;

use crate::attention::{average_stack, flatten, upsample, SaliencyMap};
use crate::error::{Error, Result, StageExt};
use crate::io::{ArrayData, DenseArray, RefineConfig};
use crate::matrix::DenseMatrix;
use crate::solver::{refine, RefineResult, SolverKind};

/// A square 0/1 mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    side: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(side: usize, values: Vec<bool>) -> Result<Self> {
        if side == 0 || values.len() != side * side {
            return Err(Error::Shape(format!(
                "mask of side {side} needs {} entries, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Self { side, values })
    }

    pub fn filled(side: usize, value: bool) -> Self {
        Self {
            side,
            values: vec![value; side * side],
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.side + col]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Nearest-neighbour resize to `new_side x new_side` (pixel-centre sampling).
    pub fn resize_nearest(&self, new_side: usize) -> Result<BinaryMask> {
        if new_side == 0 {
            return Err(Error::Parameter("mask side must be ≥ 1".into()));
        }
        if new_side == self.side {
            return Ok(self.clone());
        }
        let src = |i: usize| ((2 * i + 1) * self.side / (2 * new_side)).min(self.side - 1);
        let mut values = Vec::with_capacity(new_side * new_side);
        for r in 0..new_side {
            for c in 0..new_side {
                values.push(self.get(src(r), src(c)));
            }
        }
        BinaryMask::new(new_side, values)
    }

    /// `side x side` array of 0.0 / 1.0.
    pub fn to_array(&self) -> DenseArray {
        let data = self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        DenseArray::from_f64(vec![self.side, self.side], data).expect("side*side invariant")
    }

    /// Reads a `side x side` array whose entries are exactly 0 or 1.
    pub fn from_array(arr: &DenseArray) -> Result<BinaryMask> {
        let side = match *arr.shape() {
            [r, c] if r == c => r,
            ref s => return Err(Error::Shape(format!("mask must be square 2-D, got {s:?}"))),
        };
        let values = arr
            .to_f64_vec()
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Data(format!("mask entry {i} is {v}, expected 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        BinaryMask::new(side, values)
    }
}

/// Initial saliency for the source and target branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPair {
    pub src: SaliencyMap,
    pub tgt: SaliencyMap,
}

impl BranchPair {
    pub fn new(src: SaliencyMap, tgt: SaliencyMap) -> Result<Self> {
        if src.side() != tgt.side() {
            return Err(Error::Shape(format!(
                "branch sides differ: {} vs {}",
                src.side(),
                tgt.side()
            )));
        }
        Ok(Self { src, tgt })
    }
}

/// Elementwise maximum of two equally sized maps.
pub fn fuse_max(a: &SaliencyMap, b: &SaliencyMap) -> Result<SaliencyMap> {
    if a.side() != b.side() {
        return Err(Error::Shape(format!("cannot fuse maps of side {} and {}", a.side(), b.side())));
    }
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x.max(*y)).collect();
    SaliencyMap::new(a.side(), values)
}

/// `1` wherever the value is at least `delta`.
pub fn threshold(map: &SaliencyMap, delta: f64) -> Result<BinaryMask> {
    if !delta.is_finite() {
        return Err(Error::Parameter(format!("threshold must be finite, got {delta}")));
    }
    BinaryMask::new(map.side(), map.values().iter().map(|&v| v >= delta).collect())
}

/// `M ⊙ z_tgt + (1 − M) ⊙ z_src`, with the mask broadcast over every leading
/// axis. The trailing two axes of the latents must equal the mask side.
pub fn blend_latents(mask: &BinaryMask, z_tgt: &DenseArray, z_src: &DenseArray) -> Result<DenseArray> {
    if z_tgt.shape() != z_src.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            z_tgt.shape(),
            z_src.shape()
        )));
    }
    let shape = z_tgt.shape();
    let side = mask.side();
    if shape.len() < 2 || shape[shape.len() - 2..] != [side, side] {
        return Err(Error::Shape(format!(
            "latent shape {shape:?} does not end in the mask's {side}x{side}"
        )));
    }
    let plane = side * side;
    fn select<T: Copy>(m: &[bool], t: &[T], s: &[T], plane: usize) -> Vec<T> {
        t.iter()
            .zip(s)
            .enumerate()
            .map(|(k, (&a, &b))| if m[k % plane] { a } else { b })
            .collect()
    }
    let data = match (z_tgt.data(), z_src.data()) {
        (ArrayData::F32(t), ArrayData::F32(s)) => ArrayData::F32(select(mask.values(), t, s, plane)),
        (ArrayData::F64(t), ArrayData::F64(s)) => ArrayData::F64(select(mask.values(), t, s, plane)),
        _ => return Err(Error::Shape("latent dtypes differ".into())),
    };
    DenseArray::new(shape.to_vec(), data)
}

/// Self-attention given as `N x N` or as a `B x N x N` stack (averaged).
pub fn self_attention_matrix(arr: &DenseArray) -> Result<DenseMatrix> {
    let avg = average_stack(arr)?;
    match *avg.shape() {
        [r, c] if r == c => DenseMatrix::from_row_major(r, avg.to_f64_vec()),
        ref s => Err(Error::Shape(format!("self-attention must be square, got {s:?}"))),
    }
}

/// Cross-attention stack to the initial saliency at graph resolution.
pub fn initial_saliency(cross: &DenseArray, gamma: usize) -> Result<SaliencyMap> {
    let avg = average_stack(cross).stage("average")?;
    let up = upsample(&avg, gamma).stage("upsample")?;
    flatten(&up).stage("flatten")
}

#[derive(Debug, Clone)]
pub struct PipelineInputs<'a> {
    pub cross_src: &'a DenseArray,
    pub cross_tgt: &'a DenseArray,
    pub self_src: &'a DenseArray,
    pub self_tgt: &'a DenseArray,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BranchReport {
    pub objective_initial: f64,
    pub objective_final: f64,
    pub solver: SolverKind,
    pub cg_iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

impl From<&RefineResult> for BranchReport {
    fn from(r: &RefineResult) -> Self {
        Self {
            objective_initial: r.objective_initial,
            objective_final: r.objective_final,
            solver: r.solver_used,
            cg_iterations: r.cg_iterations,
            residual_norm: r.residual_norm,
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PipelineReport {
    pub side: usize,
    pub src: BranchReport,
    pub tgt: BranchReport,
    /// Range of the fused refined map, for calibrating `delta`.
    pub fused_min: f64,
    pub fused_max: f64,
    pub mask_pixels: usize,
    pub prepare_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

impl PipelineReport {
    pub fn converged(&self) -> bool {
        self.src.converged && self.tgt.converged
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub mask: BinaryMask,
    pub m_star_src: SaliencyMap,
    pub m_star_tgt: SaliencyMap,
    /// Elementwise max of the two refined maps, before thresholding.
    pub fused: SaliencyMap,
    pub report: PipelineReport,
}

/// average → upsample → flatten → per-branch refine → fuse_max → threshold.
pub fn run_pipeline(inputs: &PipelineInputs<'_>, config: &RefineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let start = Instant::now();
    let prepare = |cross: &DenseArray, attn: &DenseArray, branch: &'static str| -> Result<(SaliencyMap, DenseMatrix)> {
        let m0 = initial_saliency(cross, config.gamma).stage(branch)?;
        let s = self_attention_matrix(attn).stage("self-attention").stage(branch)?;
        if s.n() != m0.len() {
            return Err(Error::Shape(format!(
                "{branch}: self-attention is {0}x{0} but the upsampled map has {1} = {2}² patches",
                s.n(),
                m0.len(),
                m0.side()
            )));
        }
        Ok((m0, s))
    };
    let (m0_src, s_src) = prepare(inputs.cross_src, inputs.self_src, "source")?;
    let (m0_tgt, s_tgt) = prepare(inputs.cross_tgt, inputs.self_tgt, "target")?;
    let pair = BranchPair::new(m0_src, m0_tgt)?;
    let prepared = Instant::now();

    let (src, tgt) = rayon::join(
        || refine(&pair.src, &s_src, config).stage("refine source"),
        || refine(&pair.tgt, &s_tgt, config).stage("refine target"),
    );
    let (src, tgt) = (src?, tgt?);
    let refined = Instant::now();

    let fused = fuse_max(&src.m_star, &tgt.m_star).stage("fuse")?;
    let mask = threshold(&fused, config.delta).stage("threshold")?;
    let done = Instant::now();

    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    let report = PipelineReport {
        side: fused.side(),
        src: BranchReport::from(&src),
        tgt: BranchReport::from(&tgt),
        fused_min: fused.min(),
        fused_max: fused.max(),
        mask_pixels: mask.count(),
        prepare_ms: ms(start, prepared),
        refine_ms: ms(prepared, refined),
        total_ms: ms(start, done),
    };
    Ok(PipelineOutput {
        mask,
        m_star_src: src.m_star,
        m_star_tgt: tgt.m_star,
        fused,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(side: usize, v: Vec<f64>) -> SaliencyMap {
        SaliencyMap::new(side, v).unwrap()
    }

    #[test]
    fn fuse_examples() {
        let a = map(2, vec![1., 0., 0., 1.]);
        let b = map(2, vec![0., 1., 1., 0.]);
        assert_eq!(fuse_max(&a, &b).unwrap().values(), &[1.0; 4]);
        assert_eq!(fuse_max(&a, &a).unwrap(), a);
        assert!(fuse_max(&a, &map(1, vec![0.0])).is_err());
    }

    #[test]
    fn threshold_edges() {
        let m = map(2, vec![0.1, 0.5, 0.3, 0.9]);
        assert_eq!(threshold(&m, 0.1).unwrap().count(), 4);
        assert_eq!(threshold(&m, 0.91).unwrap().count(), 0);
        // boundary value is kept
        assert_eq!(threshold(&m, 0.3).unwrap().values(), &[false, true, true, true]);
        assert!(threshold(&m, f64::NAN).is_err());
    }

    #[test]
    fn blend_selects_by_mask() {
        let z_t = DenseArray::from_f32(vec![2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let z_s = DenseArray::from_f32(vec![2, 2, 2], (0..8).map(|i| -(i as f32)).collect()).unwrap();
        assert_eq!(blend_latents(&BinaryMask::filled(2, true), &z_t, &z_s).unwrap(), z_t);
        assert_eq!(blend_latents(&BinaryMask::filled(2, false), &z_t, &z_s).unwrap(), z_s);
        let m = BinaryMask::new(2, vec![true, false, false, true]).unwrap();
        let out = blend_latents(&m, &z_t, &z_s).unwrap();
        assert_eq!(out.to_f64_vec(), vec![0., -1., -2., 3., 4., -5., -6., 7.]);
    }

    #[test]
    fn blend_shape_errors() {
        let z = DenseArray::from_f64(vec![4, 3, 3], vec![0.0; 36]).unwrap();
        assert!(matches!(blend_latents(&BinaryMask::filled(2, true), &z, &z), Err(Error::Shape(_))));
        let z1 = DenseArray::from_f64(vec![4], vec![0.0; 4]).unwrap();
        assert!(matches!(blend_latents(&BinaryMask::filled(2, true), &z1, &z1), Err(Error::Shape(_))));
    }

    #[test]
    fn nearest_resize() {
        let m = BinaryMask::new(2, vec![true, false, false, true]).unwrap();
        let up = m.resize_nearest(4).unwrap();
        assert_eq!(up.count(), 8);
        assert!(up.get(0, 0) && up.get(1, 1) && !up.get(0, 2) && up.get(3, 3));
        assert_eq!(up.resize_nearest(2).unwrap(), m);
    }

    #[test]
    fn mask_array_roundtrip() {
        let m = BinaryMask::new(2, vec![true, false, false, true]).unwrap();
        assert_eq!(BinaryMask::from_array(&m.to_array()).unwrap(), m);
        let bad = DenseArray::from_f64(vec![1, 1], vec![0.5]).unwrap();
        assert!(BinaryMask::from_array(&bad).is_err());
    }
}

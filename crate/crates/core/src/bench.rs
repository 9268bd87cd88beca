//! Synthetic spill scenarios with known ground truth, and a harness that
//! measures how refinement changes mask quality under the full configuration
//! and each ablation.
//!
//! A scenario places a region (disk, rectangle or two blobs) on an `R x R`
//! grid. The initial saliency is the region indicator plus Gaussian noise plus
//! a few isolated high responses ("spill") outside the region. The affinity
//! mimics self-attention: a Gaussian proximity kernel between patch centres,
//! doubled for patch pairs on the same side of the region boundary, then
//! row-normalized (the raw attention) and symmetrized.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::attention::{symmetrize, AffinityMatrix, SaliencyMap};
use crate::error::{Error, Result};
use crate::graph::{laplacian, quadratic_form};
use crate::io::{write_atomic, RefineConfig};
use crate::matrix::DenseMatrix;
use crate::pipeline::{threshold, BinaryMask};
use crate::solver::refine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    Disk,
    Rectangle,
    TwoBlobs,
}

impl FromStr for RegionShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(RegionShape::Disk),
            "rectangle" => Ok(RegionShape::Rectangle),
            "two_blobs" => Ok(RegionShape::TwoBlobs),
            other => Err(Error::Parameter(format!(
                "unknown scenario '{other}' (expected disk, rectangle or two_blobs)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioParams {
    pub side: usize,
    pub shape: RegionShape,
    pub noise_sigma: f64,
    pub spill_count: usize,
    /// Added to each spill cell; the default puts spills above the region level.
    pub spill_magnitude: f64,
    /// Proximity kernel width; `None` means `side / 4`.
    pub kernel_width: Option<f64>,
    /// Multiplier for same-region patch pairs.
    pub region_boost: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            side: 32,
            shape: RegionShape::Disk,
            noise_sigma: 0.15,
            spill_count: 5,
            spill_magnitude: 1.5,
            kernel_width: None,
            region_boost: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ground_truth: BinaryMask,
    pub m0: SaliencyMap,
    /// Row-normalized, asymmetric attention-like matrix.
    pub raw_attention: DenseMatrix,
    /// `raw_attention` symmetrized.
    pub affinity: AffinityMatrix,
    /// Flat indices of the spill responses.
    pub spill_sites: Vec<usize>,
    pub seed: u64,
    pub spill_count: usize,
    pub spill_magnitude: f64,
}

fn region(side: usize, shape: RegionShape, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let r = side as f64;
    let disk = |cx: f64, cy: f64, rad: f64| {
        move |row: usize, col: usize| {
            let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
            (x - cx).powi(2) + (y - cy).powi(2) <= rad * rad
        }
    };
    let mut inside = vec![false; side * side];
    match shape {
        RegionShape::Disk => {
            let jitter = r / 8.0;
            let cx = r / 2.0 + rng.random_range(-jitter..=jitter);
            let cy = r / 2.0 + rng.random_range(-jitter..=jitter);
            let rad = r * rng.random_range(0.2..=0.3);
            let f = disk(cx, cy, rad);
            for (k, v) in inside.iter_mut().enumerate() {
                *v = f(k / side, k % side);
            }
        }
        RegionShape::Rectangle => {
            let h = rng.random_range(side / 4..=side / 2);
            let w = rng.random_range(side / 4..=side / 2);
            let top = rng.random_range(1..side - h);
            let left = rng.random_range(1..side - w);
            for row in top..top + h {
                for col in left..left + w {
                    inside[row * side + col] = true;
                }
            }
        }
        RegionShape::TwoBlobs => {
            let rad = r * rng.random_range(0.12..=0.16);
            let a = disk(r * 0.3, r * rng.random_range(0.3..=0.7), rad);
            let b = disk(r * 0.7, r * rng.random_range(0.3..=0.7), rad);
            for (k, v) in inside.iter_mut().enumerate() {
                *v = a(k / side, k % side) || b(k / side, k % side);
            }
        }
    }
    inside
}

/// Deterministic scenario for `seed`.
pub fn generate(seed: u64, params: &ScenarioParams) -> Result<Scenario> {
    let side = params.side;
    if side < 8 {
        return Err(Error::Generation(format!("grid side must be ≥ 8, got {side}")));
    }
    for (name, v) in [
        ("noise_sigma", params.noise_sigma),
        ("spill_magnitude", params.spill_magnitude),
        ("region_boost", params.region_boost),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Generation(format!("{name} must be finite and ≥ 0, got {v}")));
        }
    }
    let width = params.kernel_width.unwrap_or(side as f64 / 4.0);
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Generation(format!("kernel width must be > 0, got {width}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = region(side, params.shape, &mut rng);
    let count = inside.iter().filter(|&&v| v).count();
    if count == 0 || count == inside.len() {
        return Err(Error::Generation("region is empty or covers the whole grid".into()));
    }

    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::Generation(e.to_string()))?;
    let mut m0: Vec<f64> = inside
        .iter()
        .map(|&v| {
            let base = if v { 1.0 } else { 0.0 };
            if params.noise_sigma > 0.0 {
                base + noise.sample(&mut rng)
            } else {
                base
            }
        })
        .collect();

    let spill_sites = place_spills(side, &inside, params.spill_count, &mut rng)?;
    for &k in &spill_sites {
        m0[k] += params.spill_magnitude;
    }

    let n = side * side;
    let coord = |k: usize| ((k / side) as f64, (k % side) as f64);
    let inv_w2 = 1.0 / (width * width);
    let mut raw = DenseMatrix::from_fn(n, |a, b| {
        let (ya, xa) = coord(a);
        let (yb, xb) = coord(b);
        let d2 = (ya - yb).powi(2) + (xa - xb).powi(2);
        let boost = if inside[a] == inside[b] { params.region_boost } else { 1.0 };
        (-d2 * inv_w2).exp() * boost
    });
    let mut rows = raw.clone().into_vec();
    for row in rows.chunks_exact_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    raw = DenseMatrix::from_row_major(n, rows)?;
    let affinity = symmetrize(&raw, false)?;

    Ok(Scenario {
        ground_truth: BinaryMask::new(side, inside)?,
        m0: SaliencyMap::new(side, m0)?,
        raw_attention: raw,
        affinity,
        spill_sites,
        seed,
        spill_count: params.spill_count,
        spill_magnitude: params.spill_magnitude,
    })
}

/// Picks `count` background cells at Chebyshev distance ≥ 2 from the region
/// and from each other.
fn place_spills(side: usize, inside: &[bool], count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let near = |k: usize, pred: &dyn Fn(usize) -> bool| {
        let (r, c) = ((k / side) as isize, (k % side) as isize);
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                let (rr, cc) = (r + dr, c + dc);
                rr >= 0
                    && cc >= 0
                    && (rr as usize) < side
                    && (cc as usize) < side
                    && pred(rr as usize * side + cc as usize)
            })
        })
    };
    let mut candidates: Vec<usize> = (0..side * side)
        .filter(|&k| !near(k, &|j| inside[j]))
        .collect();
    candidates.shuffle(rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for k in candidates {
        if chosen.len() == count {
            break;
        }
        if !near(k, &|j| chosen.contains(&j)) {
            chosen.push(k);
        }
    }
    if chosen.len() < count {
        return Err(Error::Generation(format!(
            "only {} isolated background cells available for {count} spills",
            chosen.len()
        )));
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.side() != b.side() {
        return Err(Error::Shape(format!("mask sides differ: {} vs {}", a.side(), b.side())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Λ = I.
    UniformWeights,
    /// Raw attention used without symmetrization.
    NoSymmetrize,
    /// α pinned to 1.
    UnitAlpha,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::UniformWeights,
        Ablation::NoSymmetrize,
        Ablation::UnitAlpha,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::UniformWeights => "uniform_weights",
            Ablation::NoSymmetrize => "no_symmetrize",
            Ablation::UnitAlpha => "unit_alpha",
        }
    }

    pub fn apply(self, base: &RefineConfig) -> RefineConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::UniformWeights => cfg.ablation_uniform_weights = true,
            Ablation::NoSymmetrize => cfg.ablation_no_symmetrize = true,
            Ablation::UnitAlpha => cfg.alpha = 1.0,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub ablation: Ablation,
    pub iou_before: f64,
    pub iou_after: f64,
    pub smoothness_before: f64,
    pub smoothness_after: f64,
    pub obj_initial: f64,
    pub obj_final: f64,
    pub solver: &'static str,
    pub cg_iters: usize,
    pub converged: bool,
    /// Spill cells at or above `delta` before / after refinement.
    pub spill_before: usize,
    pub spill_after: usize,
    /// Only filled when timing is requested, so default output is reproducible.
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// Means over the `full` rows.
    pub iou_before: f64,
    pub iou_after: f64,
    pub smoothness_before: f64,
    pub smoothness_after: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn mean_iou_delta(&self) -> f64 {
        self.iou_after - self.iou_before
    }

    pub fn rows_for(&self, ablation: Ablation) -> impl Iterator<Item = &BenchRow> {
        self.rows.iter().filter(move |r| r.ablation == ablation)
    }

    pub fn mean_iou_after(&self, ablation: Ablation) -> f64 {
        mean(self.rows_for(ablation).map(|r| r.iou_after))
    }

    pub const CSV_HEADER: &'static str = "seed,ablation,iou_before,iou_after,smoothness_before,smoothness_after,obj_initial,obj_final,solver,cg_iters,wall_ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let wall = r.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.ablation.as_str(),
                r.iou_before,
                r.iou_after,
                r.smoothness_before,
                r.smoothness_after,
                r.obj_initial,
                r.obj_final,
                r.solver,
                r.cg_iters,
                wall
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub record_timing: bool,
}

fn run_seed(seed: u64, config: &RefineConfig, params: &ScenarioParams, opts: &SuiteOptions) -> Result<Vec<BenchRow>> {
    let sc = generate(seed, params)?;
    let l = laplacian(&sc.affinity)?;
    let before = threshold(&sc.m0, config.delta)?;
    let iou_before = iou(&before, &sc.ground_truth)?;
    let smoothness_before = quadratic_form(&l, sc.m0.values())?;
    let spill_hits = |m: &BinaryMask| sc.spill_sites.iter().filter(|&&k| m.values()[k]).count();

    Ablation::ALL
        .iter()
        .map(|&ablation| {
            let cfg = ablation.apply(config);
            let t = Instant::now();
            let res = refine(&sc.m0, &sc.raw_attention, &cfg)?;
            let wall = t.elapsed().as_secs_f64() * 1e3;
            let after = threshold(&res.m_star, cfg.delta)?;
            Ok(BenchRow {
                seed,
                ablation,
                iou_before,
                iou_after: iou(&after, &sc.ground_truth)?,
                smoothness_before,
                smoothness_after: quadratic_form(&l, res.m_star.values())?,
                obj_initial: res.objective_initial,
                obj_final: res.objective_final,
                solver: res.solver_used.as_str(),
                cg_iters: res.cg_iterations,
                converged: res.converged,
                spill_before: spill_hits(&before),
                spill_after: spill_hits(&after),
                wall_ms: opts.record_timing.then_some(wall),
            })
        })
        .collect()
}

/// Runs every seed under the full config and each ablation. Rows are ordered
/// by seed, then ablation, independent of scheduling.
pub fn run_suite(
    config: &RefineConfig,
    seeds: &[u64],
    params: &ScenarioParams,
    opts: &SuiteOptions,
) -> Result<BenchReport> {
    config.validate()?;
    if seeds.len() < 5 {
        return Err(Error::Parameter(format!("need at least 5 seeds, got {}", seeds.len())));
    }
    let per_seed: Vec<Vec<BenchRow>> = seeds
        .par_iter()
        .map(|&s| run_seed(s, config, params, opts))
        .collect::<Result<_>>()?;
    let rows: Vec<BenchRow> = per_seed.into_iter().flatten().collect();
    let full = || rows.iter().filter(|r| r.ablation == Ablation::Full);
    Ok(BenchReport {
        iou_before: mean(full().map(|r| r.iou_before)),
        iou_after: mean(full().map(|r| r.iou_after)),
        smoothness_before: mean(full().map(|r| r.smoothness_before)),
        smoothness_after: mean(full().map(|r| r.smoothness_after)),
        rows,
    })
}

mod common;

use casa_refine::attention::{confidence, symmetrize};
use casa_refine::bench::{generate, run_suite, Ablation, RegionShape, ScenarioParams, SuiteOptions};
use casa_refine::graph::{laplacian, laplacian_with, LaplacianOptions, Storage};
use casa_refine::io::{Dtype, SolverChoice};
use casa_refine::pipeline::{run_pipeline, PipelineInputs};
use casa_refine::solver::{solve_cg, solve_dense, SolverKind};
use casa_refine::{DenseArray, Error, RefineConfig};
use common::max_abs_diff;

struct Inputs {
    cross_src: DenseArray,
    cross_tgt: DenseArray,
    self_src: DenseArray,
    self_tgt: DenseArray,
}

impl Inputs {
    /// Half-resolution cross-attention (two heads) and full self-attention.
    fn synthetic(side: usize, dtype: Dtype) -> Inputs {
        let params = ScenarioParams { side, ..Default::default() };
        let n = side * side;
        let r = side / 2;
        let branch = |seed| {
            let sc = generate(seed, &params).unwrap();
            let m0 = sc.m0.values();
            let mut cross = Vec::new();
            for head in 0..2 {
                for k in 0..r * r {
                    cross.push(m0[2 * (k / r) * side + 2 * (k % r)] * (1.0 + 0.1 * head as f64));
                }
            }
            (
                DenseArray::from_f64(vec![2, r, r], cross).unwrap().cast(dtype),
                DenseArray::from_f64(vec![n, n], sc.raw_attention.into_vec()).unwrap().cast(dtype),
            )
        };
        let (cross_src, self_src) = branch(21);
        let (cross_tgt, self_tgt) = branch(22);
        Inputs { cross_src, cross_tgt, self_src, self_tgt }
    }

    fn view(&self) -> PipelineInputs<'_> {
        PipelineInputs {
            cross_src: &self.cross_src,
            cross_tgt: &self.cross_tgt,
            self_src: &self.self_src,
            self_tgt: &self.self_tgt,
        }
    }
}

#[test]
fn pipeline_is_deterministic() {
    let inputs = Inputs::synthetic(16, Dtype::F64);
    let cfg = RefineConfig::default();
    let a = run_pipeline(&inputs.view(), &cfg).unwrap();
    let b = run_pipeline(&inputs.view(), &cfg).unwrap();
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.fused, b.fused);
}

#[test]
fn pipeline_solvers_agree_on_the_mask() {
    let inputs = Inputs::synthetic(16, Dtype::F32);
    let dense = run_pipeline(&inputs.view(), &RefineConfig { solver: SolverChoice::Dense, ..Default::default() }).unwrap();
    let cg = run_pipeline(&inputs.view(), &RefineConfig { solver: SolverChoice::Cg, ..Default::default() }).unwrap();
    assert_eq!(dense.report.src.solver, SolverKind::Dense);
    assert_eq!(cg.report.src.solver, SolverKind::Cg);
    assert!(max_abs_diff(dense.fused.values(), cg.fused.values()) < 1e-6);
    assert_eq!(dense.mask, cg.mask);
}

#[test]
fn pipeline_branches_use_their_own_weights() {
    let inputs = Inputs::synthetic(16, Dtype::F64);
    let out = run_pipeline(&inputs.view(), &RefineConfig::default()).unwrap();
    let fused: Vec<f64> = out.m_star_src.values().iter().zip(out.m_star_tgt.values()).map(|(a, b)| a.max(*b)).collect();
    assert_eq!(fused, out.fused.values());
    assert_ne!(out.m_star_src, out.m_star_tgt);
}

#[test]
fn pipeline_reports_stage_on_bad_shapes() {
    let inputs = Inputs::synthetic(16, Dtype::F64);
    let bad = DenseArray::from_f64(vec![2, 3, 4], vec![0.0; 24]).unwrap();
    let err = run_pipeline(&PipelineInputs { cross_tgt: &bad, ..inputs.view() }, &RefineConfig::default()).unwrap_err();
    assert!(matches!(err.root(), Error::Shape(_)));
    assert!(err.to_string().contains("target"), "{err}");
}

#[test]
fn refinement_never_roughens_the_map() {
    let cfg = RefineConfig::default();
    for shape in [RegionShape::Disk, RegionShape::Rectangle, RegionShape::TwoBlobs] {
        let report = run_suite(&cfg, &[0, 1, 2, 3, 4], &ScenarioParams { side: 16, shape, ..Default::default() }, &SuiteOptions::default()).unwrap();
        for r in &report.rows {
            if r.ablation != Ablation::NoSymmetrize {
                assert!(r.smoothness_after <= r.smoothness_before + 1e-12, "{shape:?} seed {} {:?}", r.seed, r.ablation);
            }
            assert!(r.obj_final <= r.obj_initial + 1e-12);
        }
    }
}

fn spill_pixels(magnitude: f64) -> (usize, usize) {
    let p = ScenarioParams { spill_magnitude: magnitude, ..Default::default() };
    let report = run_suite(&RefineConfig::default(), &(0..20).collect::<Vec<_>>(), &p, &SuiteOptions::default()).unwrap();
    let before = report.rows_for(Ablation::Full).map(|r| r.spill_before).sum();
    let after = report.rows_for(Ablation::Full).map(|r| r.spill_after).sum();
    (before, after)
}

#[test]
fn moderate_spill_pixels_drop_in_aggregate() {
    let (before, after) = spill_pixels(0.6);
    assert!(after < before, "spill pixels {before} -> {after}");
}

// An isolated spike shrinks by roughly w / (w + lambda * degree), so at the
// default lambda a spike above the region level stays above delta.
#[test]
#[ignore = "fails at the default lambda; see README, Known limitations"]
fn strong_spill_pixels_drop_in_aggregate() {
    let (before, after) = spill_pixels(1.5);
    assert!(after < before, "spill pixels {before} -> {after}");
}

#[test]
fn bench_csv_is_reproducible() {
    let seeds: Vec<u64> = (10..15).collect();
    let p = ScenarioParams { side: 12, ..Default::default() };
    let a = run_suite(&RefineConfig::default(), &seeds, &p, &SuiteOptions::default()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| run_suite(&RefineConfig::default(), &seeds, &p, &SuiteOptions::default()).unwrap());
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn large_graphs_take_the_sparse_iterative_path() {
    // 4096 nodes with a local kernel: sparse storage, CG by default
    let side = 64;
    let n = side * side;
    let s = casa_refine::matrix::DenseMatrix::from_fn(n, |a, b| {
        let (ra, ca, rb, cb) = (a / side, a % side, b / side, b % side);
        if a != b && ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1 { 1.0 } else { 0.0 }
    });
    let aff = symmetrize(&s, false).unwrap();
    let auto = laplacian(&aff).unwrap();
    assert!(auto.is_sparse());
    let dense_storage = laplacian_with(&aff, LaplacianOptions { storage: Storage::Dense, sparsify: false }).unwrap();
    assert!(!dense_storage.is_sparse());
    assert_eq!(SolverChoice::Auto.resolve(n - 1), SolverChoice::Dense);
    assert_eq!(SolverChoice::Auto.resolve(n), SolverChoice::Cg);

    let m0 = casa_refine::attention::SaliencyMap::new(side, (0..n).map(|k| ((k * 7919) % 13) as f64 / 13.0).collect()).unwrap();
    let w = confidence(&m0, 1.0, false, 1e-8).unwrap();
    let sparse = solve_cg(&m0, &w, &auto, 0.5, 1e-10, 10 * n).unwrap();
    assert!(sparse.converged);
    let dense = solve_cg(&m0, &w, &dense_storage, 0.5, 1e-10, 10 * n).unwrap();
    assert!(max_abs_diff(sparse.m_star.values(), dense.m_star.values()) < 1e-9);
    let g = casa_refine::solver::gradient(sparse.m_star.values(), &m0, &w, &auto, 0.5).unwrap();
    assert!(common::l2(&g) < 1e-6);
}

#[test]
fn sparsified_laplacian_matches_on_a_small_graph() {
    let sc = generate(2, &ScenarioParams { side: 12, ..Default::default() }).unwrap();
    let w = confidence(&sc.m0, 1.0, false, 1e-8).unwrap();
    let full = laplacian(&sc.affinity).unwrap();
    let thin = laplacian_with(&sc.affinity, LaplacianOptions { storage: Storage::Auto, sparsify: true }).unwrap();
    assert!(thin.is_sparse());
    let a = solve_dense(&sc.m0, &w, &full, 0.1).unwrap();
    let b = solve_cg(&sc.m0, &w, &thin, 0.1, 1e-12, 10_000).unwrap();
    assert!(max_abs_diff(a.m_star.values(), b.m_star.values()) < 1e-5);
}

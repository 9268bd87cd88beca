// End-to-end mask refinement on synthetic attention maps.
//
// Two synthetic branches stand in for the source and target denoising
// passes: cross-attention is a 16x16 stack of three noisy "heads", the
// self-attention is a 1024x1024 patch affinity. The pipeline upsamples to
// 32x32, refines each branch, fuses and thresholds.
//
//     cargo run --example refine_masks

use casa_refine::bench::{generate, ScenarioParams};
use casa_refine::pipeline::{run_pipeline, PipelineInputs, PipelineOutput};
use casa_refine::{DenseArray, RefineConfig, Result};

/// Every other patch of the scenario map, repeated as `heads` slices with a
/// small per-head offset.
fn cross_stack(m0: &[f64], side: usize, heads: usize) -> Result<DenseArray> {
    let r = side / 2;
    let mut data = Vec::with_capacity(heads * r * r);
    for h in 0..heads {
        for row in 0..r {
            for col in 0..r {
                data.push(m0[2 * row * side + 2 * col] + 0.02 * h as f64);
            }
        }
    }
    DenseArray::from_f64(vec![heads, r, r], data)
}

pub fn run_example() -> Result<PipelineOutput> {
    let params = ScenarioParams::default();
    let src = generate(11, &params)?;
    let tgt = generate(12, &params)?;
    let n = params.side * params.side;

    let cross_src = cross_stack(src.m0.values(), params.side, 3)?;
    let cross_tgt = cross_stack(tgt.m0.values(), params.side, 3)?;
    let self_src = DenseArray::from_f64(vec![n, n], src.raw_attention.as_slice().to_vec())?;
    let self_tgt = DenseArray::from_f64(vec![n, n], tgt.raw_attention.as_slice().to_vec())?;

    let out = run_pipeline(
        &PipelineInputs {
            cross_src: &cross_src,
            cross_tgt: &cross_tgt,
            self_src: &self_src,
            self_tgt: &self_tgt,
        },
        &RefineConfig::default(),
    )?;
    let r = &out.report;
    println!("mask {0}x{0}, {1} pixels set", r.side, r.mask_pixels);
    println!("fused range [{:.3}, {:.3}]", r.fused_min, r.fused_max);
    for (name, b) in [("source", &r.src), ("target", &r.tgt)] {
        println!(
            "{name}: J {:.4} -> {:.4} via {} (residual {:.2e})",
            b.objective_initial,
            b.objective_final,
            b.solver.as_str(),
            b.residual_norm
        );
    }
    Ok(out)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

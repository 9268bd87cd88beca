// One scenario under each ablation: uniform confidence, unsymmetrized
// attention, and alpha pinned to 1.
//
//     cargo run --example ablations

use casa_refine::bench::{generate, iou, Ablation, ScenarioParams};
use casa_refine::pipeline::threshold;
use casa_refine::solver::refine;
use casa_refine::{RefineConfig, Result};

pub fn run_example() -> Result<Vec<(Ablation, f64)>> {
    let sc = generate(4, &ScenarioParams { side: 24, ..Default::default() })?;
    let base = RefineConfig { alpha: 2.0, ..Default::default() };
    let before = iou(&threshold(&sc.m0, base.delta)?, &sc.ground_truth)?;
    println!("unrefined IoU {before:.4}");
    let mut out = Vec::new();
    for a in Ablation::ALL {
        let cfg = a.apply(&base);
        let r = refine(&sc.m0, &sc.raw_attention, &cfg)?;
        let score = iou(&threshold(&r.m_star, cfg.delta)?, &sc.ground_truth)?;
        println!(
            "{:>16}: IoU {score:.4}, J {:.4} -> {:.4} ({})",
            a.as_str(),
            r.objective_initial,
            r.objective_final,
            r.solver_used.as_str()
        );
        out.push((a, score));
    }
    Ok(out)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

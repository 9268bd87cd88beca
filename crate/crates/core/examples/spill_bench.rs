// Synthetic spill benchmark: refine noisy disk scenarios with isolated false
// responses and compare thresholded masks against the ground truth.
//
//     cargo run --release --example spill_bench -- [seeds]

use casa_refine::bench::{run_suite, Ablation, BenchReport, ScenarioParams, SuiteOptions};
use casa_refine::{RefineConfig, Result};

pub fn run_example_with(seeds: u64) -> Result<BenchReport> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let report = run_suite(
        &RefineConfig::default(),
        &seeds,
        &ScenarioParams::default(),
        &SuiteOptions::default(),
    )?;
    println!(
        "IoU {:.4} -> {:.4} (delta {:+.4}) over {} seeds",
        report.iou_before,
        report.iou_after,
        report.mean_iou_delta(),
        seeds.len()
    );
    println!("smoothness {:.2} -> {:.2}", report.smoothness_before, report.smoothness_after);
    for a in Ablation::ALL {
        let spill: usize = report.rows_for(a).map(|r| r.spill_after).sum();
        println!("{:>16}: IoU {:.4}, spill pixels left {spill}", a.as_str(), report.mean_iou_after(a));
    }
    let before: usize = report.rows_for(Ablation::Full).map(|r| r.spill_before).sum();
    println!("spill pixels before refinement: {before}");
    Ok(report)
}

pub fn run_example() -> Result<BenchReport> {
    run_example_with(5)
}

fn main() -> Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    run_example_with(seeds).map(|_| ())
}

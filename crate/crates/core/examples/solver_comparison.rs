// Dense Cholesky against preconditioned CG on the same system, then a lambda
// sweep showing smoothness falling as regularization grows.
//
//     cargo run --example solver_comparison

use casa_refine::attention::confidence;
use casa_refine::bench::{generate, ScenarioParams};
use casa_refine::graph::{laplacian, quadratic_form};
use casa_refine::matrix::norm_inf;
use casa_refine::solver::{solve_cg, solve_dense};
use casa_refine::Result;

pub fn run_example() -> Result<f64> {
    let sc = generate(3, &ScenarioParams { side: 24, ..Default::default() })?;
    let l = laplacian(&sc.affinity)?;
    let w = confidence(&sc.m0, 1.0, false, 1e-8)?;

    let dense = solve_dense(&sc.m0, &w, &l, 0.1)?;
    let cg = solve_cg(&sc.m0, &w, &l, 0.1, 1e-10, 10 * sc.m0.len())?;
    let diff: Vec<f64> = dense.m_star.values().iter().zip(cg.m_star.values()).map(|(a, b)| a - b).collect();
    let gap = norm_inf(&diff);
    println!("dense residual {:.2e}", dense.residual_norm);
    println!("cg: {} iterations, residual {:.2e}", cg.cg_iterations, cg.residual_norm);
    println!("max |dense − cg| = {gap:.2e}");

    println!("{:>8}  {:>12}  {:>10}", "lambda", "m*ᵀLm*", "J(m*)");
    for lambda in [0.0, 0.1, 1.0, 10.0, 1e6] {
        let r = solve_dense(&sc.m0, &w, &l, lambda)?;
        let smooth = quadratic_form(&l, r.m_star.values())?;
        println!("{lambda:>8}  {smooth:>12.5}  {:>10.5}", r.objective_final);
    }
    Ok(gap)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

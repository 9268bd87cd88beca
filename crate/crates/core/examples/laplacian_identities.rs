// Graph Laplacian sanity checks on a random affinity: zero row sums, the
// pairwise form of the quadratic form, and nonnegativity over random vectors.
//
//     cargo run --example laplacian_identities

use casa_refine::attention::symmetrize;
use casa_refine::graph::{degree, laplacian, pairwise_energy, quadratic_form};
use casa_refine::matrix::{norm_inf, DenseMatrix};
use casa_refine::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Summary {
    pub row_sum_max: f64,
    pub max_relative_gap: f64,
    pub min_quadratic: f64,
}

pub fn run_example() -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 48;
    // raw attention is not symmetric; symmetrize first
    let raw = DenseMatrix::from_fn(n, |_, _| rng.random::<f64>());
    let s = symmetrize(&raw, false)?;
    let l = laplacian(&s)?;

    let row_sum_max = norm_inf(&l.matvec(&vec![1.0; n]));
    println!("max |L·1| = {row_sum_max:.2e}");
    let d = degree(&s)?;
    println!("degree range [{:.3}, {:.3}]", d.iter().cloned().fold(f64::INFINITY, f64::min), d.iter().cloned().fold(0.0, f64::max));

    let mut max_relative_gap = 0.0f64;
    let mut min_quadratic = f64::INFINITY;
    for _ in 0..200 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = quadratic_form(&l, &x)?;
        let p = pairwise_energy(&s, &x)?;
        max_relative_gap = max_relative_gap.max((q - p).abs() / p.abs().max(1e-300));
        min_quadratic = min_quadratic.min(q);
    }
    println!("xᵀLx vs ½Σ S(i,j)(xᵢ−xⱼ)²: max relative gap {max_relative_gap:.2e}");
    println!("min xᵀLx over 200 samples: {min_quadratic:.4}");
    Ok(Summary {
        row_sum_max,
        max_relative_gap,
        min_quadratic,
    })
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

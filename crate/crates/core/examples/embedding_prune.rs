// Percentile pruning of a text-embedding offset and its use to shift an image
// embedding, under both offset directions.
//
//     cargo run --example embedding_prune

use casa_refine::prune::{interpolate, percentile_threshold, prune, EmbeddingVector, OffsetSign};
use casa_refine::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn run_example() -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = |d: usize| -> Result<EmbeddingVector> {
        EmbeddingVector::new((0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
    };
    let d = 768;
    let img = draw(d)?;
    let src_txt = draw(d)?;
    let tgt_txt = draw(d)?;

    let offset = EmbeddingVector::new(
        src_txt.values().iter().zip(tgt_txt.values()).map(|(a, b)| a - b).collect(),
    )?;
    let mut kept = Vec::new();
    for p in [0.0, 25.0, 50.0, 80.0, 95.0, 100.0] {
        let tau = percentile_threshold(offset.values(), p)?;
        let support = prune(&offset, p)?.support().len();
        println!("p = {p:>5}: tau = {tau:.4}, kept {support}/{d}");
        kept.push(support);
    }

    for sign in [OffsetSign::Paper, OffsetSign::Reversed] {
        let moved = interpolate(&img, &src_txt, &tgt_txt, 80.0, sign)?;
        let shift: f64 = moved.values().iter().zip(img.values()).map(|(a, b)| (a - b).powi(2)).sum();
        println!("{sign:?}: ‖Δ‖ = {:.4}", shift.sqrt());
    }
    Ok(kept)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

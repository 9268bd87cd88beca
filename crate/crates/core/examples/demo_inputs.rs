// Writes a small set of input arrays for trying the command-line tool:
// cross-attention stacks, self-attention matrices, latents and embeddings.
//
//     cargo run --example demo_inputs -- demo/
//     casa-refine refine --cross-src demo/cross_src.npy ... (see README)

use std::path::{Path, PathBuf};

use casa_refine::bench::{generate, ScenarioParams};
use casa_refine::io::Dtype;
use casa_refine::{write_array, DenseArray, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn write_demo(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| casa_refine::Error::Io { path: dir.to_path_buf(), source: e })?;
    let params = ScenarioParams { side: 16, ..Default::default() };
    let (side, r) = (params.side, params.side / 2);
    let n = side * side;
    let mut written = Vec::new();
    let mut put = |name: &str, arr: DenseArray| -> Result<()> {
        let p = dir.join(name);
        write_array(&arr.cast(Dtype::F32), &p)?;
        written.push(p);
        Ok(())
    };
    for (branch, seed) in [("src", 1), ("tgt", 2)] {
        let sc = generate(seed, &params)?;
        let m0 = sc.m0.values();
        let cross: Vec<f64> = (0..r * r).map(|k| m0[2 * (k / r) * side + 2 * (k % r)]).collect();
        put(&format!("cross_{branch}.npy"), DenseArray::from_f64(vec![1, r, r], cross)?)?;
        put(&format!("self_{branch}.npy"), DenseArray::from_f64(vec![n, n], sc.raw_attention.into_vec())?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    put("latent_src.npy", DenseArray::from_f64(vec![4, 32, 32], gauss(4 * 32 * 32))?)?;
    put("latent_tgt.npy", DenseArray::from_f64(vec![4, 32, 32], gauss(4 * 32 * 32))?)?;
    for name in ["img", "src_txt", "tgt_txt"] {
        put(&format!("{name}.npy"), DenseArray::from_f64(vec![768], gauss(768))?)?;
    }
    Ok(written)
}

pub fn run_example() -> Result<Vec<PathBuf>> {
    let dir = std::env::temp_dir().join(format!("casa-demo-{}", std::process::id()));
    let files = write_demo(&dir)?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(files)
}

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "demo".into());
    for p in write_demo(Path::new(&dir))? {
        println!("{}", p.display());
    }
    Ok(())
}

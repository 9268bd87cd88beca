// Writing and reading NPY arrays, including the float32 path.
//
//     cargo run --example npy_roundtrip

use casa_refine::io::{decode, encode, Dtype};
use casa_refine::{read_array, write_array, DenseArray, Result};

pub fn run_example() -> Result<bool> {
    let dir = std::env::temp_dir().join(format!("casa-npy-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| casa_refine::Error::Io { path: dir.clone(), source: e })?;

    let a = DenseArray::from_f64(vec![2, 3, 4], (0..24).map(|i| (i as f64).sqrt()).collect())?;
    let path = dir.join("a.npy");
    write_array(&a, &path)?;
    let back = read_array(&path)?;
    println!("{:?} {:?}: round trip equal = {}", back.shape(), back.dtype(), back.bit_eq(&a));

    let f = a.cast(Dtype::F32);
    let bytes = encode(&f);
    println!("float32 file: {} bytes, header {} bytes", bytes.len(), bytes.len() - 24 * 4);
    let same = decode(&bytes)?.bit_eq(&f) && encode(&f) == bytes;
    println!("float32 decode equal and encoding stable = {same}");

    let _ = std::fs::remove_dir_all(&dir);
    Ok(back.bit_eq(&a) && same)
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}

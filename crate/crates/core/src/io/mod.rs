//! File formats: NPY arrays and JSON refinement configs.

mod config;
mod npy;

pub use config::{load_config, RefineConfig, SolverChoice, LARGE_GRAPH_NODES};
pub use npy::{decode, encode, read_array, write_array, ArrayData, DenseArray, Dtype, MAX_RANK};
pub(crate) use npy::write_atomic;

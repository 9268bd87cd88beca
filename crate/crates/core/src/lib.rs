//! Refinement of cross-attention saliency maps into spatially coherent edit
//! masks by graph Laplacian regularization over a self-attention patch graph,
//! together with the selective text-offset pruning used to steer the image
//! embedding.
//!
//! The pipeline for one editing step is:
//!
//! 1. average each branch's cross-attention stack and upsample it
//!    ([`attention::average_stack`], [`attention::upsample`]);
//! 2. weight each patch by `sigmoid(alpha * m0)^2` ([`attention::confidence`]);
//! 3. build `L = D - S_sym` from the symmetrized self-attention
//!    ([`attention::symmetrize`], [`graph::laplacian`]);
//! 4. solve `(Λ + λL) m = Λ m0` ([`solver::solve_dense`], [`solver::solve_cg`]);
//! 5. fuse both branches by elementwise max and threshold
//!    ([`pipeline::run_pipeline`]).
//!
//! ```
//! use casa_refine::attention::{confidence, symmetrize, SaliencyMap};
//! use casa_refine::graph::laplacian;
//! use casa_refine::matrix::DenseMatrix;
//! use casa_refine::solver::solve_dense;
//!
//! let m0 = SaliencyMap::new(2, vec![1.0, 0.0, 0.0, 0.0])?;
//! let s = DenseMatrix::from_fn(4, |i, j| if i != j { 0.25 } else { 0.0 });
//! let weights = confidence(&m0, 1.0, false, 1e-8)?;
//! let l = laplacian(&symmetrize(&s, false)?)?;
//! let out = solve_dense(&m0, &weights, &l, 0.5)?;
//! assert!(out.objective_final <= out.objective_initial);
//! # Ok::<(), casa_refine::Error>(())
//! ```

pub mod attention;
pub mod bench;
pub mod cli;
mod error;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod pipeline;
pub mod prune;
pub mod solver;

pub use error::{Error, Result};
pub use io::{read_array, write_array, DenseArray, RefineConfig};

//! Nearly linear time robust matrix completion.
//!
//! Recovers a low-rank matrix from a subset of its entries when some of the
//! observed entries are arbitrarily corrupted. The solvers alternate a
//! projected gradient step on the low-rank iterate with hard-thresholding of
//! the sparse residual, proceeding in stages that grow the iterate rank.
//! Robust PCA and plain matrix completion fall out as special cases
//! (full observation, respectively zero corruption).
//!
//! Modules:
//! - [`operators`]: sparse/low-rank types, sampling projection, thresholding
//! - [`spectral`]: randomized truncated SVD and spectral-norm estimation
//! - [`sampling`]: Bernoulli observation sampling and sample splitting
//! - [`solver`]: the stagewise solvers plus MC/RPCA convenience modes
//! - [`datagen`]: synthetic instances with retained ground truth
//! - [`bench`]: experiment grids (convergence, phase transition, scaling)
//! - [`fgbg`]: foreground-background separation on frame stacks
//! - [`io`]: text formats for matrices, factors, and reports

pub mod bench;
pub mod datagen;
pub mod error;
pub mod fgbg;
pub mod io;
pub mod operators;
pub mod sampling;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use operators::{LowRankFactors, ObservationSet, SparseCoo, StructuredMatrix};
pub use solver::{SolverConfig, SolverReport, SolverVariant};

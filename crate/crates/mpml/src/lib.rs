//! Mixed-precision multilevel Monte Carlo laboratory.
//!
//! This crate estimates `E[G(u)]` for an elliptic PDE with lognormal
//! random coefficients on the unit square, quantifying and exploiting
//! inexact linear solves: a level-dependent effective precision schedule
//! drives either a MINRES solver or a low-precision sparse Cholesky
//! factorisation wrapped in mixed-precision iterative refinement, with
//! full FLOP and memory-bit cost accounting.
//!
//! Module map:
//! - [`fp`]: emulated reduced-precision floating point formats
//! - [`rng`]: counter-based splittable random number streams
//! - [`cost`]: cost receipts and the analytic cost-gain predictions
//! - [`sparse`]: sparse SPD matrices in compressed row form
//! - [`cholesky`]: precision-parameterized sparse Cholesky factorisation
//! - [`minres`]: MINRES with relative-residual stopping
//! - [`ir`]: mixed-precision iterative refinement
//! - [`pde`]: lognormal field, P1 finite elements, coupled level samples
//! - [`engine`]: MLMC/MPML estimators and the adaptive algorithm
//! - [`report`]: CSV/JSON serialization of run results

pub mod cholesky;
pub mod cost;
pub mod engine;
pub mod fp;
pub mod ir;
pub mod minres;
pub mod pde;
pub mod report;
pub mod rng;
pub mod sparse;

pub use cost::CostReceipt;
pub use fp::Format;
pub use sparse::SparseSpd;

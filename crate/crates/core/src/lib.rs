//! Distributed sparse-kernel engine: SDDMM and SpMM on a logical X x Y x Z
//! processor grid with sparsity-aware, minimal-volume communication, executed
//! over a deterministic in-process multi-rank transport.
//!
//! The crate is organized bottom-up:
//!
//! - [`sparse`]: global matrix types, serial reference kernels.
//! - [`matrix_market`], [`rmat`]: ingestion (file / synthetic).
//! - [`grid`]: processor grid, Dist2D/Dist3D distribution, localization.
//! - [`analysis`]: exact communication-volume and memory accounting.
//! - [`ownership`]: parallel random owner assignment inside user sets.
//! - [`transport`]: the in-process multi-rank message-passing backend.
//! - [`plan`]: point-to-point communication graphs and their compiled,
//!   strategy-specific executable plans (buffered / relayout / zero-copy).
//! - [`kernels`]: per-rank local compute.
//! - [`engine`]: the four-phase orchestration plus the sparsity-agnostic
//!   bulk baseline, with per-rank metrics.
//! - [`predict`]: pure single-address-space predictor of every volume and
//!   footprint the engine later measures.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod matrix_market;
pub mod metrics;
pub mod ownership;
pub mod plan;
pub mod predict;
pub mod rmat;
pub mod rng;
pub mod sparse;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{dist2d, localize, make_grid, split_z, LocalBlock, ProcGrid};
pub use matrix_market::load_matrix_market;
pub use rmat::gen_rmat;
pub use sparse::{sddmm_ref, spmm_ref, DenseMatrix, Entry, SparseMatrix};

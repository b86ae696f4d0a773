//! Gated feature graph networks: a small reverse-mode autodiff engine, sparse
//! graph operators, the MLP / GCN / GFGN model family, graph signal
//! denoising, spectral filter analysis and a deterministic training harness.

pub mod data;
pub mod denoise;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use graph::{Graph, SparseOperator};
pub use layers::{Model, ModelConfig, Variant};
pub use tensor::{Matrix, Parallelism, Tape, Var};

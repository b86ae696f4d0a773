//! Dense matrices, product kernels and the reverse-mode tape.

pub mod kernels;
mod matrix;
mod tape;

pub use kernels::Parallelism;
pub use matrix::Matrix;
pub use tape::{Binary, Tape, Unary, Var};

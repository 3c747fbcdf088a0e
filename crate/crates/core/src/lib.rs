//! Nonnegative CP decomposition of dense tensors by alternating updates,
//! sequential or on a simulated processor grid.
//!
//! Start with [`driver::nncp_sequential`] or [`driver::nncp_parallel`];
//! [`synthetic::generate_synthetic`] builds exact low-rank test data.

pub mod cli;
pub mod dimtree;
pub mod driver;
pub mod error;
pub mod grid;
pub mod io;
pub mod nnls;
pub mod synthetic;
pub mod tensor;

pub use driver::{nncp_parallel, nncp_sequential, RunConfig, RunReport};
pub use error::{Error, Result};
pub use grid::GridShape;
pub use nnls::Algorithm;
pub use tensor::{DenseTensor, FactorSet, Matrix};

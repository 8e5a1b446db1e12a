pub mod cli;
pub mod criteria;
pub mod dataset;
pub mod dof;
pub mod error;
pub mod linalg;
pub mod serde_matrix;
pub mod simulate;
pub mod solver;
pub mod weights;

pub use dataset::TraceDataset;
pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;

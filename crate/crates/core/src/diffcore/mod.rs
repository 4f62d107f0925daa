//! Dense-matrix reverse-mode differentiation and the Adam optimizer.

mod adam;
mod graph;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, RowSets, Standardization, Var, COSINE_EPS, STANDARDIZE_EPS};

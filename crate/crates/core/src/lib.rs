//! Gaussian DAG structure learning with iterative reconstruction of latent
//! confounders from model residuals.

pub mod data;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod export;
pub mod graph;
pub mod latent;
pub mod ols;
pub mod residuals;
pub mod rng;
pub mod search;
pub mod sem;
pub mod simulate;

pub use data::{ColumnKind, ColumnMeta, DataMatrix, ResidualMatrix};
pub use error::{Error, ErrorClass, Result};
pub use graph::{Dag, Role};
pub use sem::{LinearSem, NodeParams};

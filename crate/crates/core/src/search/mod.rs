//! Score-based structure search.

pub mod bootstrap;
pub mod constraints;
pub mod hill_climb;
pub mod score;

pub use bootstrap::{bootstrap_consensus, bootstrap_resample, BootstrapConfig, EnsembleGraph};
pub use constraints::Constraints;
pub use hill_climb::{hill_climb, HillClimbConfig};
pub use score::{fit_dag, fit_node, gaussian_loglik, node_bic, LocalFit, ScoredGraph};

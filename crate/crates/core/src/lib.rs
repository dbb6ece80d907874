//! Dirichlet-multinomial mixture clustering of droplet single-cell UMI counts.
//!
//! The pipeline is: load a sparse genes × cells matrix, filter and keep the
//! most variable genes, build initial labels plus moment estimates of α,
//! then run multi-restart E-M and read off hard labels and posteriors.

pub mod diagnostics;
pub mod em;
pub mod error;
pub mod init;
pub mod matrix;
pub mod metrics;
pub mod output;
pub mod polya;
pub mod seed;
pub mod selection;
pub mod simulate;

pub use em::{
    e_step, fit, fit_multi_restart, ConvergenceReason, DirichletMixtureModel, FitConfig, FitResult,
    ResponsibilityMatrix,
};
pub use error::{Error, Result};
pub use init::{AlphaEstimator, InitStrategy, LabelSource};
pub use matrix::{FilterCriteria, SparseCountMatrix, SparseVec};
pub use metrics::adjusted_rand_index;
pub use polya::AlphaVector;
pub use selection::{select_k, SelectionTable};
pub use simulate::{simulate, Axis, ScenarioTemplate, Simulation, SimulationSpec};

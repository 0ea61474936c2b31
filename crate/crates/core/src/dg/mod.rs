//! Nodal discontinuous Galerkin discretisation on periodic 1D meshes.

pub mod basis;
pub mod filter;
pub mod ic;
pub mod mesh;
pub mod neural;
pub mod operator;

pub use filter::{filter_project, prolong, Projection};
pub use ic::{burgulence_initial_condition, cd_initial_condition, BurgulenceSpec};
pub use mesh::{dg_error, dg_norm, DgField, Mesh};
pub use operator::{DgOperator, PdeConfig, PdeKind};
pub use neural::{DgNeuralRhs, DgNeuralTape};

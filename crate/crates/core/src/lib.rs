pub mod autodiff;
pub mod dg;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod lorenz96;
pub mod mlp;
pub mod node;
pub mod ode;
pub mod trajectory;
pub mod training;

pub use error::{Error, Result};

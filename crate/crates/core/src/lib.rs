pub mod bench;
pub mod cnf;
pub mod enumerate;
pub mod error;
pub mod inference;
pub mod mcmc;
pub mod model;
pub mod moves;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{ConstraintMatrix, FiberSpec, ModelSpec, Table};

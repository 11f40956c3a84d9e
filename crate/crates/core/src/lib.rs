pub mod check;
pub mod degrade;
pub mod error;
pub mod flow;
pub mod info;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Eager, Graph, Ops, Real, Tensor, Var};

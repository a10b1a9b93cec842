#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod error;
pub mod levy;
pub mod matfun;
pub mod mc;
pub mod ph;
pub mod rng;
pub mod roots;
pub mod scale;

pub use error::{Error, Result};
pub use ph::PhaseTypeDist;
pub use levy::{LevyModel, PhiRoot};
pub use scale::{solve, solve_bm, solve_cpp, ScaleRepr, SolveOptions, SolveReport};

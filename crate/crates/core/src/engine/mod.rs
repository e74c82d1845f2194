//! Minimal reverse-mode differentiation over dense `f64` matrices, plus Adam.

mod adam;
mod graph;
mod gradcheck;
mod matrix;
mod param;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck};
pub use graph::{Graph, Var, NORM_EPS, PROB_CLAMP};
pub use matrix::Matrix;
pub use param::{ParamId, ParamStore, ParameterTensor};

//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

mod gradcheck;
mod graph;
pub mod kernels;
mod params;

pub use gradcheck::{check_gradients, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{BatchNormStats, CustomOp, Graph, Mode, Var};
pub use params::{ParamId, ParamStore, Parameter};

#[cfg(test)]
mod tests;

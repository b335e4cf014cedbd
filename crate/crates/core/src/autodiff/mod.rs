//! Reverse-mode automatic differentiation over dense tensors.

mod check;
mod graph;
pub mod suite;

pub use check::{finite_difference_gradient, max_relative_error};
pub use graph::{broadcast_shapes, sigmoid, softplus, Graph, OpKind, Var};
pub use suite::{gradient_suite, CheckResult, SUITE_TOLERANCE};

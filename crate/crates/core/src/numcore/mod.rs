//! Dense f64 tensor arithmetic, a define-by-run reverse-mode tape, and
//! first-order optimizers. Everything downstream builds on this module.

pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, NodeId};
pub use optim::{OptimKind, OptimizerState};
pub use tensor::{softmax, softmax_slice, Tensor};

//! Reverse-mode automatic differentiation, parameters, Adam and the
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod nn;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, CoordResult, GradCheckOptions, GradCheckReport, LossEval, ParamSummary};
pub use graph::{Gradients, Graph, NodeId};
pub use nn::{bind_params, GruCell, Linear};
pub use optim::{adam_step, AdamConfig};
pub use params::{ParamStore, CHECKPOINT_VERSION};
pub use tensor::Tensor;

use thiserror::Error;

/// Structured failures of the numeric stack.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },
    #[error("backward root is not scalar (shape {shape:?})")]
    NotScalar { shape: Vec<usize> },
    #[error("parameter error: {detail}")]
    Param { detail: String },
    #[error("i/o error: {detail}")]
    Io { detail: String },
}

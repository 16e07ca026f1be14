//! A small reverse-mode differentiation engine in double precision: NCHW
//! tensors, an operation tape with exactly the layers an image-to-image GAN
//! needs, a finite-difference gradient checker and Adam.

mod conv;
pub mod gradcheck;
pub mod optim;
pub mod suite;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use optim::{lr_schedule, Adam, AdamConfig, Parameter};
pub use tape::{Tape, Var, PROB_CLAMP};
pub use tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NotScalar(Shape),
    #[error("gradient check met a non-finite value at input {input}, coordinate {index}")]
    GradCheckNonFinite { input: usize, index: usize },
}

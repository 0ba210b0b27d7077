//! Dense tensors, a tape-based reverse-mode autodiff engine and the layer
//! primitives used by the networks.
//!
//! Parameters are stored as `f32` (the checkpoint type). The tape computes
//! values and gradients in `f64`, which keeps finite-difference checks
//! meaningful at tight tolerances.

mod checkpoint;
mod gradcheck;
mod layers;
mod store;
mod tape;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    gru_cell, kl_standard_normal, kl_value, reparameterize, GaussianHead, GruParams, LOG_VAR_CLAMP,
};
pub use store::{adam_step, AdamConfig, Grads, Init, ParamStore};
pub use tape::{Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    NumericFault(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch {
                op: "tensor",
                lhs: (n, 1),
                rhs: (data.len(), 1),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The shape read as a matrix: vectors are single rows, higher ranks
    /// fold into the leading dimension.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [lead @ .., last] => (lead.iter().product(), *last),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

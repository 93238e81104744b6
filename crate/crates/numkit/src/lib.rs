//! Minimal dense numeric core with tape-based reverse-mode differentiation.
//!
//! Everything is generic over [`Real`]: `f64` for gradient verification,
//! `f32` for training.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod real;
pub mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BackCtx, Graph, Param, ParamId, ParamStore, Var};
pub use ops::{ConvSpec, GruVars};
pub use optim::{adam_step, Adam, AdamState};
pub use real::Real;
pub use tensor::Tensor;

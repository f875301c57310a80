//! Dense arrays with tape-based reverse-mode differentiation.
//!
//! Only the operators the encoder needs are provided. Arrays are row-major
//! matrices; a column vector is an `(n, 1)` array.

mod adam;
mod array;
pub mod gradcheck;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use array::Array;
pub use tape::{Gradients, Index, Tape, Var};

use std::fmt::{Debug, Display};

use num_traits::Float;
use thiserror::Error;

/// Floating-point element type: `f32` for training, `f64` for gradient
/// checks and equivalence suites.
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {bound} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: segment {segment} is empty")]
    EmptySegment { op: &'static str, segment: usize },
    #[error("backward seed must be a 1x1 array, got {0:?}")]
    NonScalarSeed((usize, usize)),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("{0}")]
    Invalid(String),
}

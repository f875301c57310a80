//! Query-conditioned attention encoder over r-digraphs.

pub mod checkpoint;
mod encoder;
mod params;

pub use encoder::{
    encode, forward_attn_wo_rq, forward_redgnn, forward_redsimp, propagate_layer, EncodingPlan,
    Encoded, Forward, LayerGraph, LayerVars, ParamVars, Query, SinglePairOutput,
};
pub use params::{Activation, LayerParams, ModelConfig, ParameterSet, Variant};

use thiserror::Error;

use crate::diffkernel::KernelError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

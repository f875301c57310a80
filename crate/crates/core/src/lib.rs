//! Knowledge-graph reasoning by recursive r-digraph encoding.

pub mod diffkernel;
pub mod eval;
pub mod explain;
pub mod kg;
pub mod model;
pub mod rdigraph;
pub mod selftest;
pub mod synth;
pub mod train;

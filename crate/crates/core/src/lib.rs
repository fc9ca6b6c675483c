//! Knowledge graph embedding with cellular sheaves: typed graphs, sheaf
//! Laplacians and harmonic extension, training, complex query answering
//! and evaluation.

pub mod cli;
pub mod config;
pub mod eval;
pub mod kg;
pub mod model;
pub mod query;
pub mod rng;
pub mod sheaf;
pub mod synth;
pub mod train;

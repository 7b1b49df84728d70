//! Adaptive graph-convolution forecasting for multivariate time series.
//!
//! Every variable of a multivariate series is treated as a node of a graph
//! whose adjacency is learned end to end (`softmax(relu(E1 E2ᵀ))`). Stacked
//! graph convolutions over that adjacency mix information across variables
//! before an attention encoder/decoder models the temporal structure.
//!
//! The crate is `no_std` with `alloc`: it holds the numerics only. File
//! formats, CSV ingestion and the command line live in the `adpgcn` crate.

#![no_std]

extern crate alloc;

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod gradcheck;
pub mod graph_conv;
mod kernels;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

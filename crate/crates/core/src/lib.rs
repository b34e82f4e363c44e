//! Object-attribute VQA at desk scale: a bipartite attribute-fusion graph
//! network, compound-token knowledge encoding with a contrastive alignment
//! loss, an answer head, and the data pipeline plus training harness that
//! drive them.
//!
//! All numeric code is generic over the scalar type via [`scalar::Scalar`]
//! (f32 or f64); gradient checking is f64-only.

// Row/column index loops mirror the matrix math throughout.
#![allow(clippy::needless_range_loop)]

pub mod answer;
pub mod ckdm;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Concrete aliases for the two supported precisions.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Graph64 = graph::Graph<f64>;
pub type ParameterStore32 = params::ParameterStore<f32>;
pub type ParameterStore64 = params::ParameterStore<f64>;

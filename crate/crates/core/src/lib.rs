//! Debiased dynamic graph embeddings for tail-to-head structural evolution.

pub mod backbone;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod graph_store;
pub mod labeler;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod trend;

pub use error::{Error, Result};
pub use matrix::{Csr, Matrix};
pub use scalar::Scalar;

/// Double-precision aliases used by the experiment harness and CLI.
pub type Matrix64 = Matrix<f64>;
pub type Model64 = model::Model<f64>;
pub type Registry64 = backbone::BackboneRegistry<f64>;
/// Single-precision aliases.
pub type Matrix32 = Matrix<f32>;
pub type Model32 = model::Model<f32>;
pub type Registry32 = backbone::BackboneRegistry<f32>;

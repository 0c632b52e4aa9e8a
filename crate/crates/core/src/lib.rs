//! Progressive spatio-temporal GAN training with sliced-Wasserstein
//! objectives, built on a small reverse-mode autodiff engine.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for common uses.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod progressive;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Graph, NodeId};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape3d, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;

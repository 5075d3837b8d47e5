//! Shape regression for landmark-based segmentation.
//!
//! An image encoder produces a stride-8 feature map. Features are sampled at
//! a point cloud built around an initial shape, refined by a point network,
//! and decoded into a new shape by one of three regression heads.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gnn;
pub mod heads;
pub mod nn;
pub mod pgm;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{Mask, PointCloud, Shape, Structure};
pub use tensor::{grad_check, Gradients, Tensor};

//! Hyper-connections as a drop-in replacement for residual connections.
//!
//! - [`numerics`]: tensors and reverse-mode autodiff.
//! - [`hyperconn`]: static and dynamic hyper-connections.
//! - [`model`]: a small decoder-only transformer with a selectable connection scheme.
//! - [`algebra`]: fixed connection matrices for Pre-Norm, Post-Norm, and
//!   sequential/parallel layer arrangements, with numeric equivalence checks.
//! - [`analysis`]: unfolded connection matrices, cosine profiles, cost accounting.

pub mod algebra;
pub mod analysis;
pub mod error;
pub mod hyperconn;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};

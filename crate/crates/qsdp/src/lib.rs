//! Training quantized two-layer neural networks to near-global optimality.
//!
//! The pipeline: lift a multi-level polynomial-activation network to a binary
//! bilinear-activation network ([`model`]), solve a diagonally constrained
//! semidefinite relaxation of the training problem ([`sdp`]), shape the
//! solution into a unit-diagonal covariance whose sign-Gaussian samples have
//! the right first-layer statistics ([`shaping`], [`sampler`]), and compare
//! against gradient-trained + post-quantized baselines and a brute-force
//! global oracle ([`baseline`]). Dataset generation and ingestion live in
//! [`data`].

pub mod baseline;
pub mod data;
pub mod error;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod sdp;
pub mod shaping;

pub use error::QsdpError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QsdpError>;

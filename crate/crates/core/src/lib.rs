//! Electromagnetic property sensing for integrated sensing and communications.
//!
//! The crate covers the whole numerical pipeline: a volume-integral forward
//! solver that synthesizes sensing channels from voxelized targets, echo
//! simulation with least-squares channel estimation, CRB-minimizing transmit
//! beamforming under per-user rate constraints, a conditional diffusion model
//! that reconstructs a target as a 5D point cloud, evaluation metrics, and
//! synthetic dataset generation.

pub mod cloud;
pub mod beamform;
pub mod channel;
pub mod cmatrix;
pub mod data;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod physics;
pub mod rng;
pub mod scatter;

pub use error::{Error, Result};

//! Dual-path graph-convolutional autoencoder for fixed-topology triangle
//! meshes.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: triangle meshes, OBJ/PLY I/O, adjacency and validation
//! - [`geometry`]: discrete mean curvature and dataset normalisation
//! - [`sampling`]: quadric edge-collapse decimation and the down/up-sampling
//!   matrices of the global pathway
//! - [`tensor`]: a small reverse-mode autodiff tape
//! - [`layers`]: feature-steered graph convolution, linear layers and the
//!   attention fusion block
//! - [`model`]: the encoder/decoder, configuration and checkpoints
//! - [`training`]: losses, Adam, the learning-rate schedule, the training loop
//!   and reconstruction metrics
//! - [`apps`]: synthetic datasets, latent interpolation, denoising and
//!   ablations

pub mod apps;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod mesh;
pub mod model;
pub mod sampling;
pub mod sparse;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

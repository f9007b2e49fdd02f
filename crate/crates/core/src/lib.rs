//! Unsupervised clustering of near-infrared hyperspectral images.
//!
//! The pipeline preprocesses reflectance cubes, estimates the signal-subspace
//! dimension `d`, trains a small per-image autoencoder under a spectral-angle
//! loss, clusters the `d`-dimensional embeddings with a full-covariance
//! Gaussian mixture of `k = 2 d` components and optionally merges clusters
//! whose mean spectra lie within a spectral-angle threshold.

pub mod autoencoder;
pub mod cluster;
pub mod error;
pub mod hsi;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod subspace;
pub mod synth;

pub use error::{Error, Result};
pub use hsi::{HsiCube, PixelMask, PixelMatrix, WavelengthGrid};

//! Unsupervised surgical-path and camera-angle embedding from sequences of
//! anatomical bounding-box detections.
//!
//! The crate learns, without pose or position labels, a 3-D latent code
//! (path position, pitch, yaw) from detection sequences, via an
//! autoencoder whose decoder reconstructs the last frame in a centered
//! view and re-projects it through a rotation-only homography. It ships
//! a synthetic corridor simulator for ground-truth generation and a
//! quantitative evaluation harness.
//!
//! Module map:
//!
//! * [`geometry`] — rotation matrices, angle/latent conversion, the
//!   rotation homography on box centers, and its analytic Jacobian.
//! * [`scene`] — parametric corridor scene, trajectory generator, and
//!   analytic rendering of ground-truth detections with true poses.
//! * [`autodiff`] — small reverse-mode tape over dense matrices; every
//!   gradient in the crate flows through it.
//! * [`model`] — the sequence autoencoder (transformer encoder, dual
//!   decoder, rotation head) and checkpoint serialization.
//! * [`training`] — the reconstruction + centering loss, AdamW with
//!   linear warmup, and the epoch loop.
//! * [`eval`] — angle-error statistics, depth correlation, latent
//!   spread, and guidance deltas.
//! * [`data`] — dataset files, YOLO-format label ingestion, windowing.
//! * [`cli`] — the `scopenav` binary's subcommands.
//!
//! Start with the runnable examples in `examples/` for end-to-end usage.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod scene;
pub mod training;

pub use error::{Error, Result};

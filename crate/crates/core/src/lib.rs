//! Near-field XL-MIMO beam management lab.
//!
//! * [`codebook`]: UPA geometry, spherical-wavefront steering vectors, and the
//!   3D angle-distance codebook.
//! * [`scene`] and [`channel`]: box-building scenes, LoS / single-bounce paths,
//!   the per-antenna channel, and beamformed SNR / spectral efficiency.
//! * [`trajectory`]: UAV motion modes, GPS noise, and point clouds.
//! * [`oracle`] and [`metrics`]: exhaustive-sweep labels, soft Top-K targets,
//!   Top-K accuracy, and MAE.
//! * [`nn`]: a small reverse-mode autodiff tape with finite-difference checks.
//! * [`predictor`]: the cascaded trajectory-then-beam network, its losses,
//!   training, and the constant-velocity baseline.
//! * [`dataset`]: the binary dataset container and generation pipeline.
//! * [`verify`]: the gradient verification suite.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod codebook;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod predictor;
pub mod scene;
pub mod seed;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};

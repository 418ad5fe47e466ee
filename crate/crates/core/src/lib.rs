//! Few-shot neural radiance fields with combined geometric regularization.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`]: tape-based reverse-mode autodiff, Adam, gradient checking.
//! * [`encodings`]: multiresolution hash grid, spherical harmonics and the
//!   progressive encoding mask.
//! * [`nets`]: density and color MLPs with optional per-layer Lipschitz
//!   weight normalization.
//! * [`rendering`]: cameras, ray sampling, space annealing, volume rendering
//!   and neighbour-ray pairing.
//! * [`losses`]: RGB, KL, distortion, full-geometry, depth smoothness and
//!   ray entropy terms plus the weighted total.
//! * [`scenedata`]: analytic toy scenes with a reference renderer, dataset
//!   loading/splitting, image I/O and metrics.
//! * [`trainer`]: the training loop, evaluation, ablations and checkpoints.

// `!(a < b)` comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod encodings;
mod error;
pub mod losses;
pub mod nets;
pub mod rendering;
pub mod scenedata;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

//! Blind extraction of a directional speech source from diffuse noise with a
//! rank-constrained spatial covariance model.
//!
//! The pipeline runs ILRMA on a multichannel STFT, freezes the target steering
//! vector and the rank-(M-1) back-projected noise covariance, and restores the
//! missing noise eigen-direction together with time-varying source and noise
//! variances by MAP-EM. Three interchangeable EM backends trade
//! implementation effort for speed: [`solver::Backend::Naive`] inverts an
//! `M x M` matrix per time-frequency slot, [`solver::Backend::Accel1`] uses the
//! Sherman-Morrison formula to invert once per frequency bin, and
//! [`solver::Backend::Accel2`] reduces every iteration to scalar arithmetic.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod ilrma;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod solver;
pub mod stft;
pub mod synth;
pub mod verify;
pub mod wiener;

pub use error::{Error, Result};

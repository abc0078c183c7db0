//! Frequency-aware cascaded sampling for diffusion models, driven by a
//! closed-form posterior-mean denoiser instead of a trained network.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation over immutable values; file formats, configuration and the
//! command line live in the `frecas` crate.
//!
//! Layout:
//! - [`grid`]: dense grids, seeded Gaussian noise, bilinear resampling.
//! - [`schedule`]: variance-preserving and flow-matching schedules, SNR
//!   arithmetic and the cross-resolution timestep shifts.
//! - [`freq`]: band splitting, FFT and radial power spectra.
//! - [`sampler`]: CFG / frequency-aware CFG, DDIM and Euler updates.
//! - [`codec`]: identity and orthonormal one-level Haar codecs.
//! - [`bank`]: the analytic bank denoiser and cross-attention maps.
//! - [`cascade`]: stage plans, presets, transitions and the full run.
#![no_std]
// NaN must fail range checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bank;
pub mod cascade;
pub mod codec;
mod error;
pub mod freq;
pub mod grid;
mod math;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use grid::{LatentGrid, Resolution};

//! Sampling-time and fine-tuning-time machinery for generating large voxel
//! worlds with a rectified-flow model that was only ever trained on small
//! cubes.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: grid geometry, dense and sparse latents, windows, segment
//!   masks, octant arithmetic and trilinear sampling.
//! * [`flowmodel`]: the velocity-field model, the condition-mixing layer,
//!   flow-matching training and the toy decoders.
//! * [`fusion`]: overlapping-window velocity fusion and segment-map-guided
//!   velocity mixing, composed into two-stage world sampling.
//! * [`initopt`]: initial-latent optimization through a linearised
//!   trajectory, optionally parameterized by 3D Fourier coefficients.
//! * [`enhancer`]: the octant detail enhancer: pair construction,
//!   condition assembly, masked fine-tuning and auto-regressive sampling.
//! * [`metrics`]: seam, region-fidelity and normalization probes.
//! * [`scenes`]: procedural label-conditional voxel scenes used as data.
//! * [`io`]: binary archives, checkpoints, rasters and text tables.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod enhancer;
pub mod error;
pub mod flowmodel;
pub mod fusion;
pub mod initopt;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod rng;
pub mod scenes;

pub use error::{Error, Result};

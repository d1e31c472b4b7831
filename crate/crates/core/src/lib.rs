//! Learning and correcting flow maps of non-autonomous vehicle dynamics.
//!
//! Control inputs are locally parameterized on each sampling interval, which
//! turns the non-autonomous dynamics into a parametric family of one-step
//! maps. Two surrogate families learn that map from snapshot pairs:
//!
//! * [`drips`] — lifted linear operators fitted per parameter point and
//!   interpolated on the Grassmann manifold;
//! * [`fml`] — a residual feed-forward network, with layer-freezing transfer
//!   learning to correct a network trained on a misparameterized prior.
//!
//! [`harness`] wires both into reproducible, config-driven experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod fml;
pub mod harness;
pub mod io;
pub mod datagen;
pub mod drips;
pub mod localparam;

pub use error::{Error, Result};

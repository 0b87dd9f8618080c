//! Bayesian separation of point sources from a smooth background in photon event lists.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bspline;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod num;
pub mod oracle;
pub mod postprocess;
pub mod psf;
pub mod sampler;
pub mod simulator;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};

pub type Knots = bspline::KnotVector<f64>;
pub type Knots32 = bspline::KnotVector<f32>;
pub type Bounds = geometry::MapBounds<f64>;
pub type Bounds32 = geometry::MapBounds<f32>;
pub type Event = geometry::PhotonEvent<f64>;
pub type Event32 = geometry::PhotonEvent<f32>;

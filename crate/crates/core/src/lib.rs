//! Point-source super-resolution in a two-dimensional acoustic waveguide.
//!
//! The crate covers the whole chain: modal Green's functions and array
//! responses ([`physics`]), Kirchhoff-migration imaging ([`imaging`]),
//! labelled dataset generation ([`dataset`]), a small dense+convolutional
//! network with hand-written backpropagation ([`nn`]), the cross-entropy and
//! physics-informed losses ([`loss`]), training and evaluation
//! ([`pipeline`]), and the command front end ([`cli`], [`config`]).

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod io;
pub mod loss;
pub mod nn;
pub mod physics;
pub mod pipeline;

pub use error::{Error, Result};

//! Cloud-type classification from geostationary multispectral imagery.
//!
//! The crate covers the whole pipeline: gridded scene I/O and synthesis
//! ([`grid_io`]), spectral feature reorganization with maskable VIS/NIR
//! channels and viewing-geometry auxiliaries ([`features`]), a small
//! reverse-mode differentiation engine ([`autodiff`]), the CldNet
//! segmentation network ([`models`]), training with early stopping
//! ([`training`]), tiled inference ([`inference`]) and the evaluation
//! suite ([`evaluation`]).
//!
//! Inner loops are data-parallel through rayon when the `parallel` feature
//! is enabled (the default). Every reduction runs in a fixed order, so
//! results are bit-identical for any worker count.

pub mod autodiff;
pub mod evaluation;
pub mod features;
pub mod grid_io;
pub mod inference;
pub mod models;
pub mod par;
pub mod training;

mod error;

pub use error::{Error, Result};

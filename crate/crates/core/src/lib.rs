//! Percolation lab for the Manhattan grid model.
//!
//! The crate is organised bottom-up:
//!
//! * [`pointproc`]: seeded sampling of streets and pedestrians, scaling.
//! * [`continuum`]: Boolean-model connectivity, origin clusters, crossings.
//! * [`lattice`]: stretched lattice / highway bond models, duality, circuits.
//! * [`discretize`]: couplings from the continuum model to the lattice models.
//! * [`bands`]: band and label combinatorics, segments, boxes, good boxes.

pub mod bands;
pub mod continuum;
pub mod discretize;
pub mod error;
pub mod lattice;
pub mod pointproc;
pub mod rng;
pub mod stats;
pub mod unionfind;

pub use error::{Error, Result};
pub use rng::RngStream;

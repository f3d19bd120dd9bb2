//! Detection-to-decision phenotyping toolkit for row-crop yield trials.
//!
//! Everything downstream of a neural pod/plot detector lives here: assigning
//! persistent plot identities across video frames, scoring detector quality,
//! turning per-frame detections into per-view feature grids, fusing views into
//! a pod-count regression, and ranking genotypes for breeding selection. A
//! deterministic field simulator provides end-to-end ground truth at desk
//! scale.

pub mod data;
pub mod deteval;
pub mod error;
pub mod featurize;
pub mod formats;
pub mod frame_select;
pub mod geometry;
pub mod ranking;
pub mod regressor;
pub mod rng;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};

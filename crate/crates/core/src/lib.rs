//! Self-loop analytics for dockless bike-sharing.
//!
//! The pipeline turns raw lock/unlock events into per-bike mobility chains
//! ([`ingest`]), bins stay points into a metric grid and maps cells onto
//! metro-station neighbourhoods and street polygons ([`gridmap`]), detects
//! self-loops in a single pass ([`loopdetect`]), and then models the
//! resulting intensity with spatial statistics ([`spatialstats`],
//! [`sarmodel`]) and double machine learning ([`dmlcausal`]).
//! [`synthlab`] generates seeded data with known ground truth for every
//! estimator, and [`report`] wires it all together behind the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dmlcausal;
pub mod error;
pub mod gridmap;
pub mod ingest;
pub mod linalg;
pub mod loopdetect;
pub mod report;
pub mod rng;
pub mod sarmodel;
pub mod spatialstats;
pub mod synthlab;
pub mod table;

pub use error::{Error, Result};

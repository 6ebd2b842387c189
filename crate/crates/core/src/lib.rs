//! Question/answer link extraction for form-like documents: annotation
//! ingest, region extraction, spatial edge features, an edge-aware graph
//! attention network with a biaffine link scorer, training and evaluation, and
//! SVG overlays.

pub mod cli;
pub mod dataset;
pub mod document;
pub mod edges;
pub mod egat;
pub mod embeddings;
pub mod error;
pub mod geometry;
pub mod head;
pub mod model;
pub mod nn;
pub mod regions;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

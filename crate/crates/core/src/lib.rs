//! Speaker identification from sustained vowels through natural visibility
//! graphs of LPC spectral envelopes.

pub mod audio_io;
pub mod community;
pub mod corpus;
pub mod dataset;
pub mod explain;
pub mod preprocess;
pub mod error;
pub mod graph;
pub mod graph_metrics;
pub mod pipeline;
pub mod io_util;
pub mod model;
pub mod registry;
pub mod rep_select;
pub mod rng;
pub mod spectrum;
pub mod stats;
pub mod synth;
pub mod visgraph;

pub use error::{Error, Result};

//! Crop-suitability modelling: gridded climate and terrain features, class
//! balancing, classifiers, attribution, and multi-model scenario projections.

pub mod attribution;
pub mod climate;
pub mod dataset;
pub mod error;
pub mod features;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod scenario;
pub mod synth;
pub mod terrain;

pub use error::{Error, Result};

//! Cold-start rating prediction with heterogeneous interaction attention.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`data`] loads a [`RatingGraph`] and carves a cold-start [`ScenarioSplit`].
//! 2. [`sampler`] cuts prediction contexts out of the graph.
//! 3. [`embedding`] turns a context into the `n × m × e` input tensor.
//! 4. [`model`] runs the attention blocks and the rating decoder.
//! 5. [`train`] fits the model and [`eval`] scores rankings.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod embedding;
mod binio;
mod error;
pub mod eval;
pub mod model;
pub mod sampler;
pub mod train;

pub use data::{RatingGraph, Scenario, ScenarioSplit};
pub use error::{Error, Result};
pub use model::{HireModel, ModelConfig};
pub use sampler::{PredictionContext, RatingState};

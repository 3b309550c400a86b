//! Knowledge graph embeddings with calibrated scores and example-based
//! explanations of link predictions.
//!
//! The pipeline: load a [`store::TripleStore`], train an
//! [`kge::EmbeddingModel`], fit a [`calibration::Calibrator`], build
//! [`knn::NeighbourIndex`]es over the embeddings, then [`explain::explain`]
//! targets and summarise the result as an [`graph::ExplanationGraph`].
//! [`roar`] measures how much an explanation matters by retraining without it.

pub mod calibration;
pub mod error;
pub mod explain;
pub mod graph;
pub mod kge;
pub mod knn;
pub mod roar;
pub mod snapshot;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use store::{Dictionary, Triple, TripleStore};

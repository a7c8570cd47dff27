//! Unsupervised node embeddings for citation graphs.
//!
//! A multi-head graph-attention [`encoder`] is trained without labels by
//! maximizing agreement between node embeddings and a global graph summary
//! ([`contrastive`]), driven by a small reverse-mode differentiation core
//! ([`autodiff`]). Embeddings are scored with a logistic-regression probe
//! ([`evaluate`]). [`ingest`] reads the raw citation files and [`cli`]
//! wires everything into the `gat-infomax` binary.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod ingest;
pub mod matrix;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{DatasetSplit, FeatureMatrix, Graph, LabeledDataset};
pub use matrix::Matrix;

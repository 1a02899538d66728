//! Adaptive text clustering for intent discovery.
//!
//! The pipeline embeds documents (mean-pooled hashed token vectors,
//! optionally passed through a label-trained [`embed::Adapter`]), then
//! either builds an exact k-NN graph and runs Louvain when the cluster count
//! is unknown, or runs k-means when it is given. Clusters are summarized by
//! their most frequent bigrams and can be scored against reference labels
//! with purity and NMI. [`service::Project`] ties these together into the
//! label-and-recluster loop.

pub mod bench;
pub mod community;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod kmeans;
pub mod knn;
pub mod metrics;
pub mod partition;
pub mod service;
pub mod summarize;
pub mod synth;

pub use corpus::{tokenize, Corpus, Document, EmbeddingMatrix};
pub use error::{Error, Result};
pub use partition::{Method, Partition};

//! Candidate recall for retrieval-based dialogue.
//!
//! Dense conversation embeddings are compressed by a pair of autoencoders
//! into ±1 hash codes and searched by Hamming distance. Two baselines share
//! the same top-K contract: a BM25 inverted index and a flat dense
//! inner-product scan. The [`evalbench`] module measures coverage,
//! correlation, index storage, and batched latency across all three.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

mod binio;
pub mod corpus;
pub mod error;
pub mod evalbench;
pub mod hashopt;
pub mod pipeline;
pub mod retrieval;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EmbeddingStore32 = corpus::EmbeddingStore<f32>;
pub type EmbeddingStore64 = corpus::EmbeddingStore<f64>;
pub type HashModel32 = hashopt::HashModel<f32>;
pub type HashModel64 = hashopt::HashModel<f64>;
pub type FlatIndex32 = retrieval::FlatIndex<f32>;
pub type FlatIndex64 = retrieval::FlatIndex<f64>;

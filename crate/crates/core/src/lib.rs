//! Desk-scale laboratory for embedding inversion against dense retrieval:
//! a seeded toy embedder with the pooling/metric axes that matter, exact and
//! compressed vector search, a black-box beam-search inversion engine,
//! mitigation strategies with provable ranking invariants, corpus-poisoning
//! attacks, and the evaluation metric suite.

pub mod defense;
pub mod embedder;
pub mod error;
pub mod index;
pub mod inversion;
pub mod kmeans;
pub mod metrics;
pub mod oracle;
pub mod poison;
pub mod rng;
pub mod text;

pub use embedder::{embed, similarity, token_vector, Embedder, EmbedderConfig, EmbeddingVector, Metric, Pooling};
pub use error::{Error, Result};
pub use oracle::{CountingOracle, EmbedOracle, TextEmbedder};
pub use text::{build_vocabulary, detokenize, normalize_text, normalize_tokens, tokenize, TokenSequence, Vocabulary};

//! The query-access boundary between attackers and embedding pipelines.
//!
//! Attack code sees an [`EmbedOracle`] and nothing else: text in, embedding
//! out. [`CountingOracle`] wraps any oracle and counts served calls, which is
//! how the black-box audit cross-checks an attacker's own accounting.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::embedder::{Embedder, EmbedderConfig, EmbeddingVector};
use crate::error::Result;
use crate::text::{tokenize, Vocabulary};

pub trait EmbedOracle: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector>;
}

impl<T: EmbedOracle + ?Sized> EmbedOracle for &T {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed_text(text)
    }
}

impl<T: EmbedOracle + ?Sized> EmbedOracle for Arc<T> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed_text(text)
    }
}

/// Vocabulary-backed text embedding: normalize, tokenize (with hashed OOV
/// ids), pool. This is the undefended pipeline surface.
pub struct TextEmbedder {
    vocab: Arc<Vocabulary>,
    embedder: Embedder,
    max_len: usize,
}

impl TextEmbedder {
    pub fn new(vocab: Arc<Vocabulary>, cfg: EmbedderConfig, max_len: usize) -> Result<Self> {
        let embedder = Embedder::with_cached_tokens(cfg, vocab.len())?;
        Ok(TextEmbedder { vocab, embedder, max_len })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn config(&self) -> &EmbedderConfig {
        self.embedder.config()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }
}

impl EmbedOracle for TextEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let seq = tokenize(text, &self.vocab, self.max_len)?;
        self.embedder.embed(&seq)
    }
}

/// Wraps an oracle and counts how many embeddings it serves.
pub struct CountingOracle<O> {
    inner: O,
    served: AtomicU64,
}

impl<O: EmbedOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle { inner, served: AtomicU64::new(0) }
    }

    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: EmbedOracle> EmbedOracle for CountingOracle<O> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.served.fetch_add(1, Ordering::Relaxed);
        self.inner.embed_text(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{Metric, Pooling};
    use crate::text::build_vocabulary;

    #[test]
    fn text_embedder_is_deterministic_and_counted() {
        let vocab = Arc::new(build_vocabulary(&["the cat sat on the mat"], 16).unwrap());
        let cfg = EmbedderConfig { dim: 16, pooling: Pooling::Mean, metric: Metric::Cosine, seed: 3 };
        let oracle = CountingOracle::new(TextEmbedder::new(vocab, cfg, 32).unwrap());
        let a = oracle.embed_text("the cat").unwrap();
        let b = oracle.embed_text("The cat!").unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle.served(), 2);
    }
}

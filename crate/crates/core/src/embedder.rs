//! The deterministic toy embedding model.
//!
//! Token vectors are seeded Gaussian draws scaled by `1/sqrt(d)` so that
//! similarity magnitudes stay comparable across dimensions. Two pooling modes
//! cover the axes under study: `mean` averages token vectors (order-free),
//! `recurrent` runs an orthonormal linear recurrence over the sequence
//! (order-sensitive, a stand-in for CLS-style summaries). Under the cosine
//! metric all outputs are unit-normalized; under dot they are returned raw.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{ctx, normal_vector, orthonormal_rows, stream_rng};
use crate::text::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Dot,
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Dot => write!(f, "dot"),
            Metric::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Metric::Dot),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    Mean,
    Recurrent,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pooling::Mean => write!(f, "mean"),
            Pooling::Recurrent => write!(f, "recurrent"),
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "recurrent" => Ok(Pooling::Recurrent),
            other => Err(Error::config(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub pooling: Pooling,
    pub metric: Metric,
    pub seed: u64,
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::config(format!(
                "embedding dimension must be at least 8, got {}",
                self.dim
            )));
        }
        Ok(())
    }
}

/// A fixed-dimension real vector tagged with the metric it was produced
/// under. All components are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    components: Vec<f64>,
    metric: Metric,
}

impl EmbeddingVector {
    pub fn new(components: Vec<f64>, metric: Metric) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("embedding components"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(EmbeddingVector { components, metric })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Unit-normalized copy. Errors on (near-)zero norm.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateNorm);
        }
        let components = self.components.iter().map(|c| c / norm).collect();
        Ok(EmbeddingVector { components, metric: self.metric })
    }

    /// Componentwise mean. The accumulation order is fixed by the input
    /// order, so identical inputs give bit-identical results.
    pub fn mean_of(vectors: &[EmbeddingVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyInput("vectors"))?;
        let dim = first.dim();
        let metric = first.metric();
        let mut acc = vec![0.0f64; dim];
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
            }
            for (a, c) in acc.iter_mut().zip(v.components()) {
                *a += c;
            }
        }
        let n = vectors.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        EmbeddingVector::new(acc, metric)
    }
}

/// Dot product or cosine of two equal-dimension vectors.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector, metric: Metric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let dot: f64 = a
        .components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| x * y)
        .sum();
    match metric {
        Metric::Dot => Ok(dot),
        Metric::Cosine => {
            let na = a.norm();
            let nb = b.norm();
            if na < 1e-12 || nb < 1e-12 {
                return Err(Error::DegenerateNorm);
            }
            Ok((dot / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

/// Token-vector source plus pooling machinery for one configuration.
///
/// Construction precomputes the recurrence mixer (when needed) and optionally
/// a dense token-vector table; per-call embedding is then allocation-light.
/// Instances are immutable and safe to share across threads.
pub struct Embedder {
    cfg: EmbedderConfig,
    /// Cached vectors for ids `0..table.len()`; other ids are drawn on the fly.
    table: Vec<Vec<f64>>,
    /// Row-major `dim x dim` orthonormal mixer (recurrent pooling only).
    mixer: Option<Vec<f64>>,
    /// Seed-derived initial state (recurrent pooling only).
    initial: Option<Vec<f64>>,
}

impl Embedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self> {
        Self::with_cached_tokens(cfg, 0)
    }

    /// Precompute token vectors for ids `0..cached` (typically the dense
    /// vocabulary range).
    pub fn with_cached_tokens(cfg: EmbedderConfig, cached: usize) -> Result<Self> {
        cfg.validate()?;
        let table = (0..cached as u32)
            .map(|id| raw_token_components(id, &cfg))
            .collect();
        let (mixer, initial) = match cfg.pooling {
            Pooling::Mean => (None, None),
            Pooling::Recurrent => {
                let mut mrng = stream_rng(cfg.seed, ctx::MIXER, 0);
                let mixer = orthonormal_rows(&mut mrng, cfg.dim, cfg.dim);
                let mut hrng = stream_rng(cfg.seed, ctx::INITIAL_STATE, 0);
                let initial = normal_vector(&mut hrng, cfg.dim, 1.0 / (cfg.dim as f64).sqrt());
                (Some(mixer), Some(initial))
            }
        };
        Ok(Embedder { cfg, table, mixer, initial })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    fn token_components(&self, id: u32) -> Vec<f64> {
        if let Some(cached) = self.table.get(id as usize) {
            cached.clone()
        } else {
            raw_token_components(id, &self.cfg)
        }
    }

    /// The deterministic vector for one token id (always metric-raw; the
    /// pooling step applies cosine normalization).
    pub fn token_vector(&self, id: u32) -> EmbeddingVector {
        EmbeddingVector::new(self.token_components(id), self.cfg.metric)
            .expect("token vectors are finite")
    }

    /// Pool a token sequence into one embedding.
    pub fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingVector> {
        if seq.is_empty() {
            return Err(Error::NoTokens);
        }
        let d = self.cfg.dim;
        let raw = match self.cfg.pooling {
            Pooling::Mean => {
                // Accumulate per distinct id in sorted order, so every
                // permutation of a sequence produces bit-identical output.
                let mut ids = seq.ids().to_vec();
                ids.sort_unstable();
                let mut acc = vec![0.0f64; d];
                let mut i = 0;
                while i < ids.len() {
                    let id = ids[i];
                    let mut count = 0usize;
                    while i < ids.len() && ids[i] == id {
                        count += 1;
                        i += 1;
                    }
                    let tv = self.token_components(id);
                    let weight = count as f64;
                    for (a, c) in acc.iter_mut().zip(&tv) {
                        *a += weight * c;
                    }
                }
                let n = seq.len() as f64;
                for a in &mut acc {
                    *a /= n;
                }
                acc
            }
            Pooling::Recurrent => {
                let mixer = self.mixer.as_ref().expect("recurrent embedder has mixer");
                let mut state = self.initial.clone().expect("recurrent embedder has state");
                let mut next = vec![0.0f64; d];
                for &id in seq.ids() {
                    let tv = self.token_components(id);
                    for (r, slot) in next.iter_mut().enumerate() {
                        let row = &mixer[r * d..(r + 1) * d];
                        let mut acc = 0.0f64;
                        for (m, s) in row.iter().zip(&state) {
                            acc += m * s;
                        }
                        *slot = acc + tv[r];
                    }
                    std::mem::swap(&mut state, &mut next);
                }
                let scale = (seq.len() as f64).sqrt();
                for s in &mut state {
                    *s /= scale;
                }
                state
            }
        };
        let v = EmbeddingVector::new(raw, self.cfg.metric)?;
        match self.cfg.metric {
            Metric::Dot => Ok(v),
            Metric::Cosine => v.normalized(),
        }
    }
}

fn raw_token_components(id: u32, cfg: &EmbedderConfig) -> Vec<f64> {
    let mut rng: ChaCha8Rng = stream_rng(cfg.seed, ctx::TOKEN, u64::from(id));
    normal_vector(&mut rng, cfg.dim, 1.0 / (cfg.dim as f64).sqrt())
}

/// The vector for one token id under `cfg`. Convenience form; bulk callers
/// should hold an [`Embedder`].
pub fn token_vector(id: u32, cfg: &EmbedderConfig) -> Result<EmbeddingVector> {
    cfg.validate()?;
    EmbeddingVector::new(raw_token_components(id, cfg), cfg.metric)
}

/// Embed a token sequence under `cfg`. Convenience form; bulk callers should
/// hold an [`Embedder`].
pub fn embed(seq: &TokenSequence, cfg: &EmbedderConfig) -> Result<EmbeddingVector> {
    Embedder::new(*cfg)?.embed(seq)
}

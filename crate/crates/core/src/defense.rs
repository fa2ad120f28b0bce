//! Mitigations applied to embeddings before they are stored or served:
//! keyed Gaussian noise injection and a secret uniform scaling transform.
//!
//! Noise streams are addressed by `(seed, key)` rather than drawn
//! sequentially, so defended pipelines stay deterministic under any
//! evaluation order. The transform scale is a per-user secret: it never
//! appears in reports, and its `Debug` form is redacted.

use std::fmt;

use crate::embedder::{EmbeddingVector, Metric};
use crate::error::{Error, Result};
use crate::oracle::EmbedOracle;
use crate::rng::{ctx, fnv1a64, normal_vector, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Noise scale; each component receives `lambda * N(0,1)`.
    pub lambda: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(lambda: f64, seed: u64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::config(format!("noise lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(NoiseConfig { lambda, seed })
    }
}

/// Uniform scaling by a secret non-zero constant.
#[derive(Clone, Copy, PartialEq)]
pub struct SecretTransform {
    scale: f64,
}

impl SecretTransform {
    pub const DEFAULT_SCALE: f64 = -2.6;

    pub fn new(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale == 0.0 {
            return Err(Error::config("transform scale must be finite and non-zero".to_string()));
        }
        Ok(SecretTransform { scale })
    }

    /// The secret itself; callers must keep it out of reports.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Default for SecretTransform {
    fn default() -> Self {
        SecretTransform { scale: Self::DEFAULT_SCALE }
    }
}

impl fmt::Debug for SecretTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretTransform(<redacted>)")
    }
}

fn noise_with_context(v: &EmbeddingVector, cfg: &NoiseConfig, context: u64, key: u64) -> EmbeddingVector {
    if cfg.lambda == 0.0 {
        return v.clone();
    }
    let mut rng = stream_rng(cfg.seed, context, key);
    let eps = normal_vector(&mut rng, v.dim(), 1.0);
    let components = v
        .components()
        .iter()
        .zip(&eps)
        .map(|(x, e)| x + cfg.lambda * e)
        .collect();
    EmbeddingVector::new(components, v.metric()).expect("noised vector stays finite")
}

/// `v + lambda * eps` with `eps` drawn per-component from the stream
/// `(cfg.seed, key)`. Exact identity at `lambda == 0`. Renormalization for
/// cosine pipelines happens at the pipeline level, not here.
pub fn inject_noise(v: &EmbeddingVector, cfg: &NoiseConfig, key: u64) -> EmbeddingVector {
    noise_with_context(v, cfg, ctx::NOISE_DOC, key)
}

/// `c * v`, componentwise. Deliberately not renormalized: the scale is the
/// defense.
pub fn transform(v: &EmbeddingVector, t: &SecretTransform) -> EmbeddingVector {
    let components = v.components().iter().map(|x| t.scale * x).collect();
    EmbeddingVector::new(components, v.metric()).expect("scaled vector stays finite")
}

/// Which defenses a pipeline applies, and to which side.
#[derive(Debug, Clone, Default)]
pub struct DefenseSpec {
    pub noise: Option<NoiseConfig>,
    pub transform: Option<SecretTransform>,
    /// Noise is always applied to stored documents; queries only when set.
    pub noise_on_queries: bool,
}

impl DefenseSpec {
    pub fn none() -> Self {
        DefenseSpec::default()
    }

    pub fn is_noop(&self) -> bool {
        self.noise.is_none() && self.transform.is_none()
    }
}

/// An embedding pipeline with defenses applied after the base embedder.
/// Document embeddings get a fresh noise stream per doc key; the same
/// transform covers both sides so rankings are preserved.
pub struct DefendedEmbedder<O> {
    base: O,
    spec: DefenseSpec,
}

impl<O: EmbedOracle> DefendedEmbedder<O> {
    pub fn new(base: O, spec: DefenseSpec) -> Self {
        DefendedEmbedder { base, spec }
    }

    pub fn spec(&self) -> &DefenseSpec {
        &self.spec
    }

    pub fn base(&self) -> &O {
        &self.base
    }

    fn finish(&self, v: EmbeddingVector, noise_key: Option<(u64, u64)>) -> Result<EmbeddingVector> {
        let mut out = v;
        if let (Some(noise), Some((context, key))) = (&self.spec.noise, noise_key) {
            if noise.lambda > 0.0 {
                out = noise_with_context(&out, noise, context, key);
                if out.metric() == Metric::Cosine {
                    out = out.normalized()?;
                }
            }
        }
        if let Some(t) = &self.spec.transform {
            out = transform(&out, t);
        }
        Ok(out)
    }

    /// Embedding as stored for document `key`.
    pub fn embed_document(&self, key: u64, text: &str) -> Result<EmbeddingVector> {
        let v = self.base.embed_text(text)?;
        self.finish(v, Some((ctx::NOISE_DOC, key)))
    }

    /// Embedding used for retrieval queries. Noise only when configured for
    /// the query side, keyed by the normalized query text.
    pub fn embed_query(&self, text: &str) -> Result<EmbeddingVector> {
        let v = self.base.embed_text(text)?;
        let key = self
            .spec
            .noise_on_queries
            .then(|| (ctx::NOISE_QUERY, fnv1a64(crate::text::normalize_text(text).as_bytes())));
        self.finish(v, key)
    }
}

/// Wrap an embedder with a defense spec. The result's oracle surface is the
/// query side.
pub fn defend_pipeline<O: EmbedOracle>(base: O, spec: DefenseSpec) -> DefendedEmbedder<O> {
    DefendedEmbedder::new(base, spec)
}

impl<O: EmbedOracle> EmbedOracle for DefendedEmbedder<O> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        self.embed_query(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{similarity, EmbedderConfig, Pooling};
    use crate::index::{build_exact, SearchIndex};
    use crate::oracle::TextEmbedder;
    use crate::text::build_vocabulary;
    use std::sync::Arc;

    fn vector(components: Vec<f64>, metric: Metric) -> EmbeddingVector {
        EmbeddingVector::new(components, metric).unwrap()
    }

    #[test]
    fn zero_lambda_is_bitwise_identity() {
        let v = vector(vec![0.5, -0.25, 1.0, -0.0], Metric::Cosine);
        let noise = NoiseConfig::new(0.0, 99).unwrap();
        let out = inject_noise(&v, &noise, 7);
        assert_eq!(out, v);
    }

    #[test]
    fn noise_is_keyed_and_reproducible() {
        let v = vector(vec![1.0; 16], Metric::Dot);
        let noise = NoiseConfig::new(0.1, 5).unwrap();
        let a = inject_noise(&v, &noise, 3);
        let b = inject_noise(&v, &noise, 3);
        let c = inject_noise(&v, &noise, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_is_unbiased_componentwise() {
        // mean over 10k keyed draws stays within 3*sigma/sqrt(10k) of the input
        let v = vector(vec![0.2, -0.7, 1.5, 0.0, -2.0, 0.9, 0.05, -0.4], Metric::Dot);
        let lambda = 0.5;
        let noise = NoiseConfig::new(lambda, 11).unwrap();
        let draws = 10_000u64;
        let mut acc = vec![0.0f64; v.dim()];
        for key in 0..draws {
            let out = inject_noise(&v, &noise, key);
            for (a, x) in acc.iter_mut().zip(out.components()) {
                *a += x;
            }
        }
        let bound = 3.0 * lambda / (draws as f64).sqrt();
        for (mean, x) in acc.iter().map(|a| a / draws as f64).zip(v.components()) {
            assert!(
                (mean - x).abs() <= bound,
                "component mean {mean} drifted from {x} beyond {bound}"
            );
        }
    }

    #[test]
    fn transform_reference_points() {
        let v = vector(vec![0.6, -0.8], Metric::Cosine);
        let identity = SecretTransform::new(1.0).unwrap();
        assert_eq!(transform(&v, &identity), v);

        let secret = SecretTransform::default();
        let out = transform(&v, &secret);
        let cos = similarity(&v, &out, Metric::Cosine).unwrap();
        assert!((cos + 1.0).abs() < 1e-12, "negative scaling is antipodal, got {cos}");

        assert!(SecretTransform::new(0.0).is_err());
    }

    #[test]
    fn transform_scales_dot_scores_and_keeps_ranking() {
        let metric = Metric::Dot;
        let q = vector(vec![0.3, 1.1, -0.2], metric);
        let docs = vec![
            (0u64, vector(vec![1.0, 0.2, 0.1], metric)),
            (1, vector(vec![-0.3, 0.8, 0.5], metric)),
            (2, vector(vec![0.0, -1.0, 0.7], metric)),
        ];
        let t = SecretTransform::default();
        let tdocs: Vec<(u64, EmbeddingVector)> = docs
            .iter()
            .map(|(id, v)| (*id, transform(v, &t)))
            .collect();
        let tq = transform(&q, &t);

        let plain = build_exact(&docs, metric).unwrap().search(&q, 3).unwrap();
        let defended = build_exact(&tdocs, metric).unwrap().search(&tq, 3).unwrap();
        let plain_ids: Vec<u64> = plain.iter().map(|(id, _)| *id).collect();
        let def_ids: Vec<u64> = defended.iter().map(|(id, _)| *id).collect();
        assert_eq!(plain_ids, def_ids);
        for ((_, s), (_, ts)) in plain.iter().zip(&defended) {
            assert!((ts - 6.76 * s).abs() < 1e-9, "score should scale by c^2");
        }
    }

    fn text_fixture(metric: Metric) -> (Arc<crate::text::Vocabulary>, EmbedderConfig) {
        let corpus = [
            "the cat sat on the mat",
            "a dog ran in the park",
            "birds fly over the river",
            "fish swim under the bridge",
        ];
        let vocab = Arc::new(build_vocabulary(&corpus, 64).unwrap());
        let cfg = EmbedderConfig { dim: 32, pooling: Pooling::Mean, metric, seed: 17 };
        (vocab, cfg)
    }

    #[test]
    fn transform_only_pipeline_preserves_full_rankings() {
        for metric in [Metric::Dot, Metric::Cosine] {
            let (vocab, cfg) = text_fixture(metric);
            let base = TextEmbedder::new(vocab.clone(), cfg, 32).unwrap();
            let defended = defend_pipeline(
                TextEmbedder::new(vocab.clone(), cfg, 32).unwrap(),
                DefenseSpec {
                    transform: Some(SecretTransform::default()),
                    ..DefenseSpec::none()
                },
            );
            let docs = [
                "the cat sat on the mat",
                "a dog ran in the park",
                "birds fly over the river",
                "fish swim under the bridge",
                "the dog and the cat nap",
            ];
            let plain_items: Vec<(u64, EmbeddingVector)> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| (i as u64, base.embed_text(d).unwrap()))
                .collect();
            let def_items: Vec<(u64, EmbeddingVector)> = docs
                .iter()
                .enumerate()
                .map(|(i, d)| (i as u64, defended.embed_document(i as u64, d).unwrap()))
                .collect();
            let plain_idx = build_exact(&plain_items, metric).unwrap();
            let def_idx = build_exact(&def_items, metric).unwrap();
            for query in ["the cat", "dog park", "river fly birds"] {
                let a = plain_idx.search(&base.embed_text(query).unwrap(), 5).unwrap();
                let b = def_idx.search(&defended.embed_query(query).unwrap(), 5).unwrap();
                let ids_a: Vec<u64> = a.iter().map(|(id, _)| *id).collect();
                let ids_b: Vec<u64> = b.iter().map(|(id, _)| *id).collect();
                assert_eq!(ids_a, ids_b, "metric {metric}: ranked lists must match");
            }
        }
    }

    #[test]
    fn zero_lambda_pipeline_equals_undefended() {
        let (vocab, cfg) = text_fixture(Metric::Cosine);
        let base = TextEmbedder::new(vocab.clone(), cfg, 32).unwrap();
        let defended = defend_pipeline(
            TextEmbedder::new(vocab, cfg, 32).unwrap(),
            DefenseSpec {
                noise: Some(NoiseConfig::new(0.0, 1).unwrap()),
                ..DefenseSpec::none()
            },
        );
        for (i, text) in ["the cat sat", "dog in the park"].iter().enumerate() {
            let a = base.embed_text(text).unwrap();
            let b = defended.embed_document(i as u64, text).unwrap();
            assert_eq!(a, b);
            let c = defended.embed_query(text).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn cosine_noise_renormalizes_stored_docs() {
        let (vocab, cfg) = text_fixture(Metric::Cosine);
        let defended = defend_pipeline(
            TextEmbedder::new(vocab, cfg, 32).unwrap(),
            DefenseSpec {
                noise: Some(NoiseConfig::new(0.5, 2).unwrap()),
                ..DefenseSpec::none()
            },
        );
        let v = defended.embed_document(0, "the cat sat").unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }
}

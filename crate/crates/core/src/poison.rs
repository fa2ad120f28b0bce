//! Corpus poisoning: cluster the training queries, craft one adversarial
//! passage per cluster, insert the passages under reserved doc ids, and
//! measure how often unseen queries retrieve them.
//!
//! Three generation methods: inversion of the cluster centroid through the
//! black-box engine, greedy token flipping (the white-box baseline reduced
//! to exhaustive coordinate search, affordable at desk scale), and the
//! centroid oracle, which inserts the raw centroid embedding itself and
//! upper-bounds anything that must route through text.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::embedder::{similarity, EmbeddingVector, Metric};
use crate::error::{Error, Result};
use crate::index::{ExactIndex, SearchIndex};
use crate::inversion::{correct, InversionConfig, VocabProfile};
use crate::kmeans;
use crate::oracle::EmbedOracle;
use crate::rng::{ctx, stream_rng};
use crate::text::{detokenize, TokenSequence, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackMethod {
    Inversion,
    TokenFlip,
    CentroidOracle,
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackMethod::Inversion => write!(f, "inversion"),
            AttackMethod::TokenFlip => write!(f, "tokenflip"),
            AttackMethod::CentroidOracle => write!(f, "oracle"),
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inversion" => Ok(AttackMethod::Inversion),
            "tokenflip" => Ok(AttackMethod::TokenFlip),
            "oracle" | "centroid-oracle" => Ok(AttackMethod::CentroidOracle),
            other => Err(Error::config(format!("unknown attack method {other:?}"))),
        }
    }
}

/// Componentwise mean of embeddings; renormalized under cosine so the result
/// is a metric-valid target.
pub fn centroid(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let mean = EmbeddingVector::mean_of(embeddings)?;
    match mean.metric() {
        Metric::Dot => Ok(mean),
        Metric::Cosine => mean.normalized(),
    }
}

/// Raw componentwise mean without metric adjustment (what the centroid
/// oracle inserts directly).
pub fn raw_centroid(embeddings: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    EmbeddingVector::mean_of(embeddings)
}

/// Query clustering result. Assignments are positional: `assignments[i]` is
/// the cluster of the i-th input embedding.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<EmbeddingVector>,
    pub assignments: Vec<usize>,
    pub distortion_trace: Vec<f64>,
}

/// Seeded k-means over query embeddings.
pub fn kmeans_queries(
    embeddings: &[EmbeddingVector],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput("query embeddings"));
    }
    if k == 0 || k > embeddings.len() {
        return Err(Error::arg(format!(
            "k must be in 1..={}, got {k}",
            embeddings.len()
        )));
    }
    let metric = embeddings[0].metric();
    let slices: Vec<&[f64]> = embeddings.iter().map(|e| e.components()).collect();
    let out = kmeans::run(&slices, k, iters, seed)?;
    let centroids = out
        .centroids
        .into_iter()
        .map(|c| EmbeddingVector::new(c, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel {
        k,
        centroids,
        assignments: out.assignments,
        distortion_trace: out.distortion_trace,
    })
}

#[derive(Debug, Clone)]
pub struct AdversarialPassage {
    /// Text of the passage; `None` for centroid-oracle passages, which have
    /// no textual form.
    pub text: Option<String>,
    pub embedding: EmbeddingVector,
    pub source_cluster: usize,
    pub method: AttackMethod,
    /// Cosine between the passage embedding and its cluster centroid.
    pub centroid_cosine: f64,
}

/// One inverted passage per cluster centroid.
pub fn generate_adversarial_inversion(
    model: &ClusterModel,
    cfg: &InversionConfig,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<Vec<AdversarialPassage>> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(cluster, raw)| {
            let target = match raw.metric() {
                Metric::Cosine => raw.normalized()?,
                Metric::Dot => raw.clone(),
            };
            let result = correct(&target, cfg, profile, oracle, vocab)?;
            let text = detokenize(&result.best.seq, vocab)?;
            let centroid_cosine = similarity(&result.best.emb, raw, Metric::Cosine)?;
            Ok(AdversarialPassage {
                text: Some(text),
                embedding: result.best.emb,
                source_cluster: cluster,
                method: AttackMethod::Inversion,
                centroid_cosine,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct FlipConfig {
    pub passage_len: usize,
    /// Full coordinate passes over the passage.
    pub sweeps: usize,
    pub seed: u64,
    /// Try only this many profile-ranked candidates per position instead of
    /// the whole vocabulary.
    pub candidate_cap: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FlipOutcome {
    pub passage: AdversarialPassage,
    /// Best similarity-to-centroid after initialization and after each
    /// accepted flip; non-decreasing.
    pub score_trace: Vec<f64>,
}

/// Greedy token flipping toward a centroid: start from a seeded random
/// passage, then repeatedly replace single positions with the best-scoring
/// candidate token, stopping after `sweeps` passes or a pass without
/// improvement.
pub fn generate_adversarial_tokenflip(
    target: &EmbeddingVector,
    flip: &FlipConfig,
    cluster: usize,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<FlipOutcome> {
    if flip.passage_len == 0 {
        return Err(Error::config("tokenflip passage length must be >= 1".to_string()));
    }
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let metric = target.metric();
    let vocab_len = vocab.len() as u32;
    let mut rng = stream_rng(flip.seed, ctx::FLIP_INIT, cluster as u64);
    let mut ids: Vec<u32> = (0..flip.passage_len)
        .map(|_| rng.random_range(0..vocab_len))
        .collect();

    let candidates: Vec<u32> = match flip.candidate_cap {
        None => (0..vocab_len).collect(),
        Some(cap) => {
            // rank by alignment with the centroid direction
            let mut scored: Vec<(f64, u32)> = (0..vocab_len)
                .map(|id| {
                    let row = profile.row(id);
                    let s = similarity(row, target, Metric::Cosine).unwrap_or(f64::NEG_INFINITY);
                    (s, id)
                })
                .collect();
            scored.sort_by(|(sa, ia), (sb, ib)| sb.total_cmp(sa).then(ia.cmp(ib)));
            scored.truncate(cap.max(1));
            scored.into_iter().map(|(_, id)| id).collect()
        }
    };

    let eval = |ids: &[u32]| -> Result<(f64, EmbeddingVector)> {
        let text = detokenize(&TokenSequence::new(ids.to_vec())?, vocab)?;
        let emb = oracle.embed_text(&text)?;
        let score = similarity(&emb, target, metric)?;
        Ok((score, emb))
    };

    let (mut best_score, mut best_emb) = eval(&ids)?;
    let mut trace = vec![best_score];

    for _sweep in 0..flip.sweeps {
        let mut improved = false;
        for pos in 0..ids.len() {
            let original = ids[pos];
            let mut best_here = (best_score, original);
            for &candidate in &candidates {
                if candidate == original {
                    continue;
                }
                ids[pos] = candidate;
                let (score, _) = eval(&ids)?;
                if score > best_here.0 {
                    best_here = (score, candidate);
                }
            }
            ids[pos] = best_here.1;
            if best_here.1 != original {
                improved = true;
                let (score, emb) = eval(&ids)?;
                best_score = score;
                best_emb = emb;
                trace.push(best_score);
            }
        }
        if !improved {
            break;
        }
    }

    let text = detokenize(&TokenSequence::new(ids)?, vocab)?;
    let centroid_cosine = similarity(&best_emb, target, Metric::Cosine)?;
    Ok(FlipOutcome {
        passage: AdversarialPassage {
            text: Some(text),
            embedding: best_emb,
            source_cluster: cluster,
            method: AttackMethod::TokenFlip,
            centroid_cosine,
        },
        score_trace: trace,
    })
}

/// One tokenflip passage per cluster centroid.
pub fn generate_adversarial_tokenflip_all(
    model: &ClusterModel,
    flip: &FlipConfig,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<Vec<AdversarialPassage>> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(cluster, raw)| {
            let target = match raw.metric() {
                Metric::Cosine => raw.normalized()?,
                Metric::Dot => raw.clone(),
            };
            Ok(generate_adversarial_tokenflip(&target, flip, cluster, profile, oracle, vocab)?.passage)
        })
        .collect()
}

/// Centroid-oracle passages: raw cluster centroids inserted directly.
pub fn centroid_oracle_passages(model: &ClusterModel) -> Vec<AdversarialPassage> {
    model
        .centroids
        .iter()
        .enumerate()
        .map(|(cluster, c)| AdversarialPassage {
            text: None,
            embedding: c.clone(),
            source_cluster: cluster,
            method: AttackMethod::CentroidOracle,
            centroid_cosine: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonReport {
    pub method: AttackMethod,
    pub k: usize,
    /// Fraction of test queries retrieving at least one adversarial passage
    /// in the top n, per n. Monotone non-decreasing in n.
    pub success_at: BTreeMap<usize, f64>,
}

/// Insert the passages under reserved ids (`reserved_base + cluster index`)
/// and measure Success@n over the test queries.
pub fn evaluate_poisoning(
    index: &ExactIndex,
    passages: &[AdversarialPassage],
    test_queries: &[EmbeddingVector],
    ns: &[usize],
    reserved_base: u64,
) -> Result<PoisonReport> {
    if test_queries.is_empty() {
        return Err(Error::EmptyInput("test queries"));
    }
    if ns.is_empty() {
        return Err(Error::EmptyInput("cutoffs"));
    }
    if reserved_base <= index.max_id() {
        return Err(Error::IdCollision(reserved_base));
    }
    let method = passages.first().map_or(AttackMethod::CentroidOracle, |p| p.method);
    let k = passages.len();

    let mut success_at: BTreeMap<usize, f64> = BTreeMap::new();
    if passages.is_empty() {
        for &n in ns {
            success_at.insert(n, 0.0);
        }
        return Ok(PoisonReport { method, k, success_at });
    }

    let rows: Vec<(u64, EmbeddingVector)> = passages
        .iter()
        .enumerate()
        .map(|(i, p)| (reserved_base + i as u64, p.embedding.clone()))
        .collect();
    let poisoned = index.with_appended(&rows)?;
    let max_n = ns.iter().copied().max().unwrap_or(1);

    let mut first_hits: Vec<Option<usize>> = Vec::with_capacity(test_queries.len());
    for q in test_queries {
        let ranked = poisoned.search(q, max_n)?;
        let hit = ranked
            .iter()
            .position(|(id, _)| *id >= reserved_base)
            .map(|pos| pos + 1);
        first_hits.push(hit);
    }
    let total = test_queries.len() as f64;
    for &n in ns {
        let hits = first_hits
            .iter()
            .filter(|h| h.is_some_and(|rank| rank <= n))
            .count();
        success_at.insert(n, hits as f64 / total);
    }
    Ok(PoisonReport { method, k, success_at })
}

/// Success@n with the raw centroids inserted directly: the upper bound a
/// perfect text-based attack could approach.
pub fn upper_bound(
    model: &ClusterModel,
    index: &ExactIndex,
    test_queries: &[EmbeddingVector],
    ns: &[usize],
    reserved_base: u64,
) -> Result<PoisonReport> {
    let passages = centroid_oracle_passages(model);
    evaluate_poisoning(index, &passages, test_queries, ns, reserved_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{EmbedderConfig, Pooling};
    use crate::index::build_exact;
    use crate::inversion::profile_vocabulary;
    use crate::oracle::TextEmbedder;
    use crate::text::build_vocabulary;
    use std::sync::Arc;

    fn vector(components: Vec<f64>, metric: Metric) -> EmbeddingVector {
        EmbeddingVector::new(components, metric).unwrap()
    }

    #[test]
    fn centroid_reference_points() {
        let metric = Metric::Dot;
        let v = vector(vec![0.4, -1.2], metric);
        let single = centroid(&[v.clone()]).unwrap();
        assert_eq!(single, v);

        let neg = vector(vec![-0.4, 1.2], metric);
        let zero = centroid(&[v.clone(), neg]).unwrap();
        assert!(zero.components().iter().all(|c| c.abs() < 1e-15));

        // mean of equal-size partition means equals the global mean
        let vs: Vec<EmbeddingVector> = (0..4)
            .map(|i| vector(vec![i as f64, (i * i) as f64], metric))
            .collect();
        let left = raw_centroid(&vs[..2]).unwrap();
        let right = raw_centroid(&vs[2..]).unwrap();
        let nested = raw_centroid(&[left, right]).unwrap();
        let global = raw_centroid(&vs).unwrap();
        for (a, b) in nested.components().iter().zip(global.components()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_queries_edge_cases() {
        let metric = Metric::Dot;
        let embs: Vec<EmbeddingVector> = (0..6)
            .map(|i| vector(vec![i as f64, 1.0], metric))
            .collect();

        let own = kmeans_queries(&embs, 6, 10, 0).unwrap();
        assert!(*own.distortion_trace.last().unwrap() == 0.0);

        let one = kmeans_queries(&embs, 1, 10, 0).unwrap();
        assert!((one.centroids[0].components()[0] - 2.5).abs() < 1e-12);

        assert!(kmeans_queries(&embs, 7, 10, 0).is_err());

        for w in own.distortion_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    fn text_fixture() -> (Arc<Vocabulary>, TextEmbedder) {
        let words: Vec<String> = (0..48).map(|i| format!("w{i:03}")).collect();
        let vocab = Arc::new(build_vocabulary(&[words.join(" ")], 48).unwrap());
        let cfg = EmbedderConfig { dim: 24, pooling: Pooling::Mean, metric: Metric::Cosine, seed: 5 };
        let emb = TextEmbedder::new(vocab.clone(), cfg, 32).unwrap();
        (vocab, emb)
    }

    #[test]
    fn inversion_passages_recover_identical_single_token_clusters() {
        let (vocab, emb) = text_fixture();
        let profile = profile_vocabulary(&vocab, &emb).unwrap();
        // all queries identical single-token texts: centroid is that token
        let q = emb.embed_text("w007").unwrap();
        let model = kmeans_queries(&vec![q.clone(), q.clone(), q.clone()], 1, 5, 0).unwrap();
        let cfg = InversionConfig { steps: 8, beam: 2, proposal_width: 8, max_len: 4, ..Default::default() };
        let passages = generate_adversarial_inversion(&model, &cfg, &profile, &emb, &vocab).unwrap();
        assert_eq!(passages.len(), 1);
        assert_eq!(passages[0].text.as_deref(), Some("w007"));
        assert!(passages[0].centroid_cosine > 1.0 - 1e-9);
        assert!(passages[0].centroid_cosine <= 1.0);
    }

    #[test]
    fn tokenflip_finds_single_token_argmax() {
        let (vocab, emb) = text_fixture();
        let profile = profile_vocabulary(&vocab, &emb).unwrap();
        let target = emb.embed_text("w031").unwrap();
        // exhaustive scan oracle: w031 is the argmax token
        let mut best = (f64::NEG_INFINITY, 0u32);
        for id in 0..vocab.len() as u32 {
            let s = similarity(profile.row(id), &target, Metric::Cosine).unwrap();
            if s > best.0 {
                best = (s, id);
            }
        }
        assert_eq!(vocab.surface_of(best.1).unwrap(), "w031");

        let flip = FlipConfig { passage_len: 1, sweeps: 3, seed: 1, candidate_cap: None };
        let out = generate_adversarial_tokenflip(&target, &flip, 0, &profile, &emb, &vocab).unwrap();
        assert_eq!(out.passage.text.as_deref(), Some("w031"));
        for w in out.score_trace.windows(2) {
            assert!(w[1] >= w[0], "flip score must not decrease: {:?}", out.score_trace);
        }
    }

    #[test]
    fn zero_sweeps_returns_seeded_initialization() {
        let (vocab, emb) = text_fixture();
        let profile = profile_vocabulary(&vocab, &emb).unwrap();
        let target = emb.embed_text("w001 w002").unwrap();
        let flip = FlipConfig { passage_len: 3, sweeps: 0, seed: 9, candidate_cap: None };
        let a = generate_adversarial_tokenflip(&target, &flip, 4, &profile, &emb, &vocab).unwrap();
        let b = generate_adversarial_tokenflip(&target, &flip, 4, &profile, &emb, &vocab).unwrap();
        assert_eq!(a.passage.text, b.passage.text);
        assert_eq!(a.score_trace.len(), 1);
    }

    #[test]
    fn poisoning_success_accounting() {
        let metric = Metric::Cosine;
        let docs: Vec<(u64, EmbeddingVector)> = vec![
            (0, vector(vec![1.0, 0.0, 0.0], metric)),
            (1, vector(vec![0.0, 1.0, 0.0], metric)),
        ];
        let index = build_exact(&docs, metric).unwrap();
        let queries = vec![
            vector(vec![0.9, 0.1, 0.0], metric),
            vector(vec![0.1, 0.9, 0.0], metric),
        ];

        // no passages: success 0 everywhere
        let empty = evaluate_poisoning(&index, &[], &queries, &[1, 2], 100).unwrap();
        assert!(empty.success_at.values().all(|s| *s == 0.0));

        // passages equal to each query's embedding win rank 1 (scores are
        // strictly above every corpus doc by construction)
        let passages: Vec<AdversarialPassage> = queries
            .iter()
            .enumerate()
            .map(|(i, q)| AdversarialPassage {
                text: None,
                embedding: q.clone(),
                source_cluster: i,
                method: AttackMethod::CentroidOracle,
                centroid_cosine: 1.0,
            })
            .collect();
        let full = evaluate_poisoning(&index, &passages, &queries, &[1, 2, 3], 100).unwrap();
        assert_eq!(full.success_at[&1], 1.0);

        // monotone in n
        let vals: Vec<f64> = full.success_at.values().copied().collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0]);
        }

        // id collision with corpus range
        assert!(matches!(
            evaluate_poisoning(&index, &passages, &queries, &[1], 1),
            Err(Error::IdCollision(1))
        ));
    }

    #[test]
    fn upper_bound_with_train_as_test_hits_rank_one() {
        let metric = Metric::Cosine;
        let mut rng = stream_rng(3, ctx::SAMPLE, 8);
        let queries: Vec<EmbeddingVector> = (0..6)
            .map(|_| {
                vector(crate::rng::normal_vector(&mut rng, 12, 1.0), metric)
                    .normalized()
                    .unwrap()
            })
            .collect();
        let docs: Vec<(u64, EmbeddingVector)> = (0..10)
            .map(|i| {
                (
                    i as u64,
                    vector(crate::rng::normal_vector(&mut rng, 12, 1.0), metric)
                        .normalized()
                        .unwrap(),
                )
            })
            .collect();
        let index = build_exact(&docs, metric).unwrap();
        // k = |queries|, test = train: every query's own embedding is inserted
        let model = kmeans_queries(&queries, queries.len(), 20, 1).unwrap();
        let report = upper_bound(&model, &index, &queries, &[1, 5], 1000).unwrap();
        assert_eq!(report.success_at[&1], 1.0);
    }
}

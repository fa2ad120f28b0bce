//! Vector indexes: exact (flat) search, seeded orthonormal projection, and
//! product quantization with asymmetric distance computation.

mod eval;
mod io;
mod pq;
mod projection;

pub use eval::{topk_accuracy, topk_hits, EvalQuery, RetrievalReport};
pub use io::{read_embedding, read_index, write_embedding, write_exact, write_pq, IndexFile};
pub use pq::{pq_decode, pq_encode, train_pq, PQCode, PQCodebook, PQIndex};
pub use projection::{train_projection, ProjectedEmbedder, ProjectionMatrix};

use std::collections::HashSet;

use crate::embedder::{similarity, EmbeddingVector, Metric};
use crate::error::{Error, Result};

/// Bytes of storage accounted per stored real (the index file stores IEEE
/// single precision; size reporting uses the same convention).
pub const BYTES_PER_REAL: u64 = 4;

/// Common searchable-index surface. Results are ranked by descending score
/// with ties broken by ascending doc id, so rankings are deterministic.
pub trait SearchIndex: Send + Sync {
    fn search(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<(u64, f64)>>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn dim(&self) -> usize;
    fn metric(&self) -> Metric;
    /// Stored-vector bytes (codebooks included for compressed indexes; doc
    /// ids excluded and reported separately by callers that need them).
    fn size_bytes(&self) -> u64;
}

/// Brute-force index over row-major stored vectors.
#[derive(Debug, Clone)]
pub struct ExactIndex {
    ids: Vec<u64>,
    rows: Vec<f64>,
    dim: usize,
    metric: Metric,
    norms: Vec<f64>,
}

impl ExactIndex {
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Stored vector by doc id.
    pub fn vector_of(&self, id: u64) -> Option<EmbeddingVector> {
        let i = self.ids.iter().position(|&x| x == id)?;
        Some(
            EmbeddingVector::new(self.row(i).to_vec(), self.metric)
                .expect("stored rows are finite"),
        )
    }

    pub fn max_id(&self) -> u64 {
        self.ids.iter().copied().max().unwrap_or(0)
    }

    /// New index with extra rows appended. Every new id must be strictly
    /// above all existing ids (the reserved-range convention).
    pub fn with_appended(&self, extra: &[(u64, EmbeddingVector)]) -> Result<ExactIndex> {
        let ceiling = self.max_id();
        let mut out = self.clone();
        let mut seen: HashSet<u64> = HashSet::new();
        for (id, v) in extra {
            if *id <= ceiling || !seen.insert(*id) {
                return Err(Error::IdCollision(*id));
            }
            if v.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: v.dim() });
            }
            out.ids.push(*id);
            out.rows.extend_from_slice(v.components());
            out.norms.push(v.norm());
        }
        Ok(out)
    }
}

/// Build a brute-force index. Doc ids must be unique; dimensions uniform.
pub fn build_exact(items: &[(u64, EmbeddingVector)], metric: Metric) -> Result<ExactIndex> {
    if items.is_empty() {
        return Err(Error::EmptyInput("index embeddings"));
    }
    let dim = items[0].1.dim();
    let mut ids = Vec::with_capacity(items.len());
    let mut rows = Vec::with_capacity(items.len() * dim);
    let mut norms = Vec::with_capacity(items.len());
    let mut seen: HashSet<u64> = HashSet::with_capacity(items.len());
    for (id, v) in items {
        if !seen.insert(*id) {
            return Err(Error::DuplicateDocId(*id));
        }
        if v.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
        }
        ids.push(*id);
        rows.extend_from_slice(v.components());
        norms.push(v.norm());
    }
    Ok(ExactIndex { ids, rows, dim, metric, norms })
}

pub(crate) fn rank_and_truncate(mut scored: Vec<(u64, f64)>, n: usize) -> Vec<(u64, f64)> {
    scored.sort_by(|(ia, sa), (ib, sb)| sb.total_cmp(sa).then(ia.cmp(ib)));
    scored.truncate(n);
    scored
}

impl SearchIndex for ExactIndex {
    fn search(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<(u64, f64)>> {
        if n == 0 {
            return Err(Error::arg("search requires n >= 1"));
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let scored = match self.metric {
            Metric::Dot => self
                .ids
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let dot: f64 = self.row(i).iter().zip(query.components()).map(|(a, b)| a * b).sum();
                    (id, dot)
                })
                .collect::<Vec<_>>(),
            Metric::Cosine => {
                let qn = query.norm();
                if qn < 1e-12 {
                    return Err(Error::DegenerateNorm);
                }
                let mut out = Vec::with_capacity(self.ids.len());
                for (i, &id) in self.ids.iter().enumerate() {
                    let rn = self.norms[i];
                    if rn < 1e-12 {
                        return Err(Error::DegenerateNorm);
                    }
                    let dot: f64 = self.row(i).iter().zip(query.components()).map(|(a, b)| a * b).sum();
                    out.push((id, (dot / (qn * rn)).clamp(-1.0, 1.0)));
                }
                out
            }
        };
        Ok(rank_and_truncate(scored, n))
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn metric(&self) -> Metric {
        self.metric
    }

    fn size_bytes(&self) -> u64 {
        self.ids.len() as u64 * self.dim as u64 * BYTES_PER_REAL
    }
}

/// Convenience used by tests and the search paths that score one stored
/// vector against a query under the index metric.
pub fn score(index_metric: Metric, query: &EmbeddingVector, stored: &EmbeddingVector) -> Result<f64> {
    similarity(query, stored, index_metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::Metric;

    fn v(components: Vec<f64>, metric: Metric) -> EmbeddingVector {
        EmbeddingVector::new(components, metric).unwrap()
    }

    #[test]
    fn build_and_search_basics() {
        let metric = Metric::Cosine;
        let items = vec![
            (0u64, v(vec![1.0, 0.0], metric)),
            (1, v(vec![0.0, 1.0], metric)),
            (2, v(vec![0.7, 0.7], metric)),
        ];
        let idx = build_exact(&items, metric).unwrap();
        assert_eq!(idx.len(), 3);

        let hits = idx.search(&items[1].1, 1).unwrap();
        assert_eq!(hits[0].0, 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);

        // n larger than the corpus returns everything.
        let all = idx.search(&items[0].1, 10).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn duplicate_ids_and_empty_inputs_error() {
        let metric = Metric::Dot;
        let dup = vec![
            (7u64, v(vec![1.0, 0.0], metric)),
            (7, v(vec![0.0, 1.0], metric)),
        ];
        assert!(matches!(build_exact(&dup, metric), Err(Error::DuplicateDocId(7))));
        assert!(matches!(build_exact(&[], metric), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let metric = Metric::Dot;
        let items = vec![
            (0u64, v(vec![1.0, 0.0], metric)),
            (1, v(vec![1.0, 0.0, 0.0], metric)),
        ];
        assert!(matches!(
            build_exact(&items, metric),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn identical_embeddings_tie_break_by_doc_id() {
        let metric = Metric::Dot;
        let shared = vec![0.5, 0.5];
        let items = vec![
            (9u64, v(shared.clone(), metric)),
            (3, v(shared.clone(), metric)),
            (5, v(vec![-1.0, -1.0], metric)),
        ];
        let idx = build_exact(&items, metric).unwrap();
        let hits = idx.search(&v(vec![1.0, 1.0], metric), 3).unwrap();
        assert_eq!(hits[0].0, 3);
        assert_eq!(hits[1].0, 9);
        assert_eq!(hits[2].0, 5);
    }

    #[test]
    fn appended_rows_must_use_reserved_ids() {
        let metric = Metric::Dot;
        let items = vec![
            (0u64, v(vec![1.0, 0.0], metric)),
            (4, v(vec![0.0, 1.0], metric)),
        ];
        let idx = build_exact(&items, metric).unwrap();
        let bad = idx.with_appended(&[(4, v(vec![1.0, 1.0], metric))]);
        assert!(matches!(bad, Err(Error::IdCollision(4))));
        let good = idx
            .with_appended(&[(5, v(vec![1.0, 1.0], metric))])
            .unwrap();
        assert_eq!(good.len(), 3);
    }

    #[test]
    fn exact_size_accounting() {
        let metric = Metric::Dot;
        let items: Vec<(u64, EmbeddingVector)> = (0..1000)
            .map(|i| (i as u64, v(vec![0.1; 64], metric)))
            .collect();
        let idx = build_exact(&items, metric).unwrap();
        assert_eq!(idx.size_bytes(), 256_000);
    }
}

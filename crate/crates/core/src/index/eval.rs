//! Top-k retrieval-accuracy evaluation: a query counts as answered at `k`
//! when any of its top-k passages contains one of its answer strings as a
//! substring, after shared normalization.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::embedder::EmbeddingVector;
use crate::error::{Error, Result};
use crate::oracle::EmbedOracle;
use crate::text::normalize_text;

use super::SearchIndex;

/// A query ready for evaluation: its embedding under the pipeline being
/// measured, plus its acceptable answer strings.
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub embedding: EmbeddingVector,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    /// Fraction of answered queries per cutoff; monotone non-decreasing in k.
    pub accuracy_at: BTreeMap<usize, f64>,
    pub index_bytes: u64,
}

/// Per-query hit indicators at each cutoff, from a single ranked pass per
/// query. `hits[q][k]` is true when query `q` is answered within the top `k`.
pub fn topk_hits(
    index: &dyn SearchIndex,
    queries: &[EvalQuery],
    corpus_texts: &HashMap<u64, String>,
    ks: &[usize],
) -> Result<Vec<BTreeMap<usize, bool>>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("queries"));
    }
    if ks.is_empty() {
        return Err(Error::EmptyInput("cutoffs"));
    }
    for q in queries {
        if q.answers.is_empty() {
            return Err(Error::arg("every query needs at least one answer string"));
        }
    }
    let normalized_docs: HashMap<u64, String> = corpus_texts
        .iter()
        .map(|(id, text)| (*id, normalize_text(text)))
        .collect();
    let max_k = ks.iter().copied().max().unwrap_or(1);

    queries
        .iter()
        .map(|q| {
            let ranked = index.search(&q.embedding, max_k)?;
            let answers: Vec<String> = q.answers.iter().map(|a| normalize_text(a)).collect();
            // first rank (1-based) whose passage contains an answer
            let mut first_hit: Option<usize> = None;
            for (rank, (doc, _)) in ranked.iter().enumerate() {
                let text = normalized_docs
                    .get(doc)
                    .ok_or(Error::UnknownDocId(*doc))?;
                if answers.iter().any(|a| !a.is_empty() && text.contains(a)) {
                    first_hit = Some(rank + 1);
                    break;
                }
            }
            Ok(ks
                .iter()
                .map(|&k| (k, first_hit.is_some_and(|r| r <= k)))
                .collect())
        })
        .collect()
}

/// Aggregate [`topk_hits`] into per-k accuracy plus the index size.
pub fn topk_accuracy(
    index: &dyn SearchIndex,
    queries: &[(String, Vec<String>)],
    corpus_texts: &HashMap<u64, String>,
    ks: &[usize],
    query_oracle: &dyn EmbedOracle,
) -> Result<RetrievalReport> {
    let eval_queries = queries
        .iter()
        .map(|(text, answers)| {
            Ok(EvalQuery {
                embedding: query_oracle.embed_text(text)?,
                answers: answers.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = topk_hits(index, &eval_queries, corpus_texts, ks)?;
    Ok(accuracy_from_hits(&hits, index.size_bytes()))
}

pub fn accuracy_from_hits(hits: &[BTreeMap<usize, bool>], index_bytes: u64) -> RetrievalReport {
    let n = hits.len().max(1) as f64;
    let mut accuracy_at = BTreeMap::new();
    if let Some(first) = hits.first() {
        for &k in first.keys() {
            let answered = hits.iter().filter(|h| h.get(&k) == Some(&true)).count();
            accuracy_at.insert(k, answered as f64 / n);
        }
    }
    RetrievalReport { accuracy_at, index_bytes }
}

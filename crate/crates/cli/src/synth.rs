//! Synthetic corpora with planted answer spans.
//!
//! Words are fixed-width (`w0041`) so no surface is a substring of another,
//! keeping answer-containment checks unambiguous. Words partition into
//! topics; documents and queries draw from one topic's pool, and each topic
//! plants its designated answer word in most of its documents. Queries about
//! a topic therefore retrieve that topic's documents, and query embeddings
//! cluster by topic.
//!
//! With `canonical_order` set, document tokens are re-ordered by vocabulary
//! id after generation. Mean-pooled embeddings carry no order information,
//! so reconstruction fixtures adopt this canonical order as the text-side
//! convention matching the engine's lexicographic tie-break.

use anyhow::{bail, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

use embedlab_core::rng::{ctx, stream_rng};
use embedlab_core::{build_vocabulary, normalize_tokens};

use crate::data::{Corpus, Document, Query, QuerySet, Split};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub docs: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    #[serde(default = "default_topics")]
    pub topics: usize,
    #[serde(default = "default_vocab_words")]
    pub vocab_words: usize,
    #[serde(default = "default_doc_len")]
    pub doc_len: (usize, usize),
    #[serde(default = "default_query_len")]
    pub query_len: (usize, usize),
    pub seed: u64,
    #[serde(default)]
    pub canonical_order: bool,
}

fn default_topics() -> usize {
    16
}

fn default_vocab_words() -> usize {
    1024
}

fn default_doc_len() -> (usize, usize) {
    (12, 32)
}

fn default_query_len() -> (usize, usize) {
    (3, 8)
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.docs == 0 {
            bail!("synthetic spec needs at least one document");
        }
        if self.topics == 0 || self.vocab_words / self.topics < 4 {
            bail!("each topic needs at least 4 words");
        }
        if self.doc_len.0 < 2 || self.doc_len.0 > self.doc_len.1 {
            bail!("doc_len must satisfy 2 <= min <= max");
        }
        if self.query_len.0 < 1 || self.query_len.0 > self.query_len.1 {
            bail!("query_len must satisfy 1 <= min <= max");
        }
        Ok(())
    }
}

pub struct SynthData {
    pub corpus: Corpus,
    pub train: QuerySet,
    pub test: QuerySet,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let width = (spec.vocab_words.max(10) as f64).log10().ceil() as usize;
    let words: Vec<String> = (0..spec.vocab_words)
        .map(|i| format!("w{i:0width$}"))
        .collect();
    let per_topic = spec.vocab_words / spec.topics;
    let topic_pool = |t: usize| &words[t * per_topic..(t + 1) * per_topic];
    // first word of each topic's pool is its planted answer
    let answer_of = |t: usize| topic_pool(t)[0].clone();

    let mut rng = stream_rng(spec.seed, ctx::SYNTH, 0);

    let mut docs = Vec::with_capacity(spec.docs);
    for i in 0..spec.docs {
        let topic = i % spec.topics;
        let pool = topic_pool(topic);
        let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect();
        // plant the topic's answer word in ~70% of its documents
        if rng.random_range(0..10) < 7 {
            let pos = rng.random_range(0..tokens.len());
            tokens[pos] = answer_of(topic);
        }
        docs.push(Document { id: format!("d{i:05}"), text: tokens.join(" ") });
    }

    let mut make_queries = |count: usize, prefix: &str, split: Split| -> QuerySet {
        let queries = (0..count)
            .map(|i| {
                let topic = i % spec.topics;
                let pool = topic_pool(topic);
                let len = rng.random_range(spec.query_len.0..=spec.query_len.1);
                // skip index 0 (the answer word) so queries route by topic
                // overlap rather than by containing the answer themselves
                let tokens: Vec<String> = (0..len)
                    .map(|_| pool[rng.random_range(1..pool.len())].clone())
                    .collect();
                Query {
                    id: format!("{prefix}{i:05}"),
                    text: tokens.join(" "),
                    answers: vec![answer_of(topic)],
                }
            })
            .collect();
        QuerySet { queries, split }
    };

    let train = make_queries(spec.train_queries, "qtr", Split::Train);
    let test = make_queries(spec.test_queries, "qte", Split::Test);

    let mut corpus = Corpus { docs };
    if spec.canonical_order {
        canonicalize_corpus(&mut corpus, spec.vocab_words)?;
    }
    Ok(SynthData { corpus, train, test })
}

/// Re-order each document's tokens by vocabulary id. Token frequencies are
/// order-free, so the vocabulary is unchanged by this pass.
pub fn canonicalize_corpus(corpus: &mut Corpus, vocab_size: usize) -> Result<()> {
    let texts: Vec<&str> = corpus.docs.iter().map(|d| d.text.as_str()).collect();
    let vocab = build_vocabulary(&texts, vocab_size)?;
    for doc in &mut corpus.docs {
        let mut tokens = normalize_tokens(&doc.text);
        tokens.sort_by_key(|t| vocab.id_of(t));
        doc.text = tokens.join(" ");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SynthSpec {
        SynthSpec {
            docs: 60,
            train_queries: 20,
            test_queries: 10,
            topics: 4,
            vocab_words: 64,
            doc_len: (4, 10),
            query_len: (2, 5),
            seed: 7,
            canonical_order: false,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a.corpus.to_jsonl(), b.corpus.to_jsonl());
        assert_eq!(a.train.to_jsonl(), b.train.to_jsonl());
        assert_eq!(a.test.to_jsonl(), b.test.to_jsonl());
    }

    #[test]
    fn answers_are_planted_in_topic_documents() {
        let data = generate(&spec()).unwrap();
        for q in &data.test.queries {
            let answer = &q.answers[0];
            let planted = data
                .corpus
                .docs
                .iter()
                .filter(|d| d.text.split(' ').any(|t| t == answer))
                .count();
            assert!(planted > 0, "answer {answer} must appear somewhere in the corpus");
        }
    }

    #[test]
    fn canonical_order_sorts_by_vocabulary_id() {
        let mut s = spec();
        s.canonical_order = true;
        let data = generate(&s).unwrap();
        let texts: Vec<&str> = data.corpus.docs.iter().map(|d| d.text.as_str()).collect();
        let vocab = build_vocabulary(&texts, s.vocab_words).unwrap();
        for doc in &data.corpus.docs {
            let ids: Vec<u32> = normalize_tokens(&doc.text)
                .iter()
                .map(|t| vocab.id_of(t))
                .collect();
            assert!(ids.windows(2).all(|w| w[0] <= w[1]), "doc not canonical: {}", doc.text);
        }
    }

    #[test]
    fn fixed_width_words_are_never_substrings() {
        let data = generate(&spec()).unwrap();
        // all words share a length, so containment implies equality
        let mut lens: Vec<usize> = data
            .corpus
            .docs
            .iter()
            .flat_map(|d| d.text.split(' ').map(|t| t.len()))
            .collect();
        lens.dedup();
        assert_eq!(lens.iter().collect::<std::collections::HashSet<_>>().len(), 1);
    }
}

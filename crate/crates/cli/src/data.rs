//! Line-delimited data ingestion: one JSON object per line, validated with
//! line numbers in every error.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use embedlab_core::normalize_tokens;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub split: Split,
}

impl Corpus {
    pub fn texts(&self) -> Vec<&str> {
        self.docs.iter().map(|d| d.text.as_str()).collect()
    }

    /// Canonical serialization used for data hashing.
    pub fn to_jsonl(&self) -> String {
        self.docs
            .iter()
            .map(|d| serde_json::to_string(d).expect("documents serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl QuerySet {
    pub fn to_jsonl(&self) -> String {
        self.queries
            .iter()
            .map(|q| serde_json::to_string(q).expect("queries serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    parse_corpus(&raw).with_context(|| format!("parsing corpus {}", path.display()))
}

pub fn parse_corpus(raw: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(line)
            .with_context(|| format!("line {lineno}: malformed document record"))?;
        if !seen.insert(doc.id.clone()) {
            bail!("line {lineno}: duplicate id {:?}", doc.id);
        }
        if normalize_tokens(&doc.text).is_empty() {
            bail!("line {lineno}: document {:?} has no tokens after normalization", doc.id);
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        bail!("corpus is empty");
    }
    Ok(Corpus { docs })
}

pub fn load_queries(path: &Path, split: Split) -> Result<QuerySet> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading queries {}", path.display()))?;
    parse_queries(&raw, split).with_context(|| format!("parsing queries {}", path.display()))
}

pub fn parse_queries(raw: &str, split: Split) -> Result<QuerySet> {
    let mut queries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let query: Query = serde_json::from_str(line)
            .with_context(|| format!("line {lineno}: malformed query record"))?;
        if !seen.insert(query.id.clone()) {
            bail!("line {lineno}: duplicate id {:?}", query.id);
        }
        if normalize_tokens(&query.text).is_empty() {
            bail!("line {lineno}: query {:?} has no tokens after normalization", query.id);
        }
        if query.answers.is_empty() {
            bail!("line {lineno}: query {:?} has an empty answers array", query.id);
        }
        if query.answers.iter().any(|a| normalize_tokens(a).is_empty()) {
            bail!("line {lineno}: query {:?} has an empty answer string", query.id);
        }
        queries.push(query);
    }
    if queries.is_empty() {
        bail!("query set is empty");
    }
    Ok(QuerySet { queries, split })
}

/// Load a corpus/query-file pair. The query file is tagged `test`; training
/// queries are loaded separately where an experiment needs them.
pub fn ingest(corpus_path: &Path, queries_path: &Path) -> Result<(Corpus, QuerySet)> {
    let corpus = load_corpus(corpus_path)?;
    let queries = load_queries(queries_path, Split::Test)?;
    Ok((corpus, queries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_corpus_parses() {
        let raw = r#"{"id":"a","text":"one two"}
{"id":"b","text":"three four"}
{"id":"c","text":"five six"}"#;
        let corpus = parse_corpus(raw).unwrap();
        assert_eq!(corpus.docs.len(), 3);
    }

    #[test]
    fn duplicate_id_names_the_line() {
        let raw = "{\"id\":\"a\",\"text\":\"one\"}\n{\"id\":\"a\",\"text\":\"two\"}";
        let err = parse_corpus(raw).unwrap_err().to_string();
        assert!(err.contains("line 2"), "got: {err}");
    }

    #[test]
    fn malformed_line_names_the_line() {
        let raw = "{\"id\":\"a\",\"text\":\"one\"}\nnot json";
        let err = format!("{:#}", parse_corpus(raw).unwrap_err());
        assert!(err.contains("line 2"), "got: {err}");
    }

    #[test]
    fn empty_answers_are_rejected() {
        let raw = r#"{"id":"q","text":"what","answers":[]}"#;
        let err = parse_queries(raw, Split::Test).unwrap_err().to_string();
        assert!(err.contains("empty answers"), "got: {err}");
    }
}

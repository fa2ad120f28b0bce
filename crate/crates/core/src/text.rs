//! Text normalization, vocabulary construction and token sequences.
//!
//! Normalization is deliberately simple: lowercase, split on whitespace,
//! strip leading/trailing ASCII punctuation from each token, drop tokens
//! that become empty. Every evaluation path (retrieval answer matching,
//! reconstruction metrics) shares this one definition.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Ids at or above a vocabulary's length are hashed out-of-vocabulary ids,
/// drawn from a reserved range of this size.
pub const OOV_SPACE: u32 = 1 << 20;

/// Normalize text into tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let token = raw
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase();
            if token.is_empty() {
                None
            } else {
                Some(token)
            }
        })
        .collect()
}

/// Normalized text as a single space-joined string.
pub fn normalize_text(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

/// An ordered token sequence. Non-empty by construction; producers enforce
/// their own length caps (`tokenize` truncates, the inversion engine respects
/// its configured maximum).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::NoTokens);
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A corpus-derived vocabulary with dense ids `0..len`. Unknown surfaces map
/// into a reserved hashed id range above the dense ids, so tokenization is
/// total over arbitrary text.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, u32>,
    max_size: usize,
}

impl Vocabulary {
    /// Number of dense (in-vocabulary) ids.
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// Configured maximum size (the build cap, not necessarily `len`).
    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Dense id for a normalized surface, if in vocabulary.
    pub fn dense_id(&self, surface: &str) -> Option<u32> {
        self.ids.get(surface).copied()
    }

    /// Total id for a normalized surface: dense when known, hashed otherwise.
    pub fn id_of(&self, surface: &str) -> u32 {
        self.dense_id(surface).unwrap_or_else(|| self.oov_id(surface))
    }

    /// Hashed id for an out-of-vocabulary surface.
    pub fn oov_id(&self, surface: &str) -> u32 {
        let bucket = (fnv1a64(surface.as_bytes()) % u64::from(OOV_SPACE)) as u32;
        self.surfaces.len() as u32 + bucket
    }

    pub fn is_oov(&self, id: u32) -> bool {
        id as usize >= self.surfaces.len()
    }

    /// Surface for a dense id.
    pub fn surface_of(&self, id: u32) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    /// Serialize as `surface<TAB>id` lines in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, surface) in self.surfaces.iter().enumerate() {
            writeln!(out, "{surface}\t{id}").expect("write to string");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load a vocabulary saved by [`Vocabulary::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let mut surfaces = Vec::new();
        let mut ids = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (surface, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::BadFormat(format!("line {}: missing tab", lineno + 1)))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::BadFormat(format!("line {}: bad id", lineno + 1)))?;
            if id as usize != surfaces.len() {
                return Err(Error::BadFormat(format!(
                    "line {}: ids must be dense and ordered",
                    lineno + 1
                )));
            }
            if ids.insert(surface.to_string(), id).is_some() {
                return Err(Error::BadFormat(format!(
                    "line {}: duplicate surface {surface}",
                    lineno + 1
                )));
            }
            surfaces.push(surface.to_string());
        }
        if surfaces.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let max_size = surfaces.len();
        Ok(Vocabulary { surfaces, ids, max_size })
    }
}

/// Build a vocabulary of the `max_size` most frequent normalized tokens.
/// Ties break lexicographically, so the result is a pure function of the
/// corpus contents.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size == 0 {
        return Err(Error::arg("vocabulary max_size must be positive"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in corpus {
        for token in normalize_tokens(text.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::NoTokens);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|(sa, ca), (sb, cb)| cb.cmp(ca).then_with(|| sa.cmp(sb)));
    ranked.truncate(max_size);

    let mut surfaces = Vec::with_capacity(ranked.len());
    let mut ids = HashMap::with_capacity(ranked.len());
    for (id, (surface, _)) in ranked.into_iter().enumerate() {
        ids.insert(surface.clone(), id as u32);
        surfaces.push(surface);
    }
    Ok(Vocabulary { surfaces, ids, max_size })
}

/// Tokenize text against a vocabulary, truncating to `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    let tokens = normalize_tokens(text);
    if tokens.is_empty() {
        return Err(Error::NoTokens);
    }
    let ids = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id_of(t))
        .collect();
    TokenSequence::new(ids)
}

/// Space-join the surfaces of a sequence. Fails on hashed ids, whose surface
/// is not recoverable.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut parts = Vec::with_capacity(seq.len());
    for &id in seq.ids() {
        let surface = vocab.surface_of(id).ok_or(Error::UnknownTokenId(id))?;
        parts.push(surface);
    }
    Ok(parts.join(" "))
}

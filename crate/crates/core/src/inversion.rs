//! Black-box text reconstruction from a target embedding.
//!
//! The engine's only access to the attacked pipeline is an [`EmbedOracle`]:
//! it profiles the vocabulary with one query per token, proposes candidate
//! sequences, re-embeds them through the oracle, and keeps whatever lands
//! closest to the target. Nothing in this module touches embedder internals;
//! the audit counter in [`InversionResult`] must always equal the oracle's
//! own served-call count.
//!
//! The search is a hypothesis stage (greedy token appends) followed by
//! beam-corrected editing. `steps` counts beam-expansion rounds. Proposals
//! come from the residual direction `target - current` when the attacked
//! pooling is mean (where the residual is exactly the missing-token signal),
//! and from seeded random samples otherwise. All ties break by lexicographic
//! token-id order; under mean pooling that tie-break extends to the whole
//! permutation class of the final sequence, which shares one embedding.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::embedder::{similarity, EmbeddingVector, Metric, Pooling};
use crate::error::{Error, Result};
use crate::oracle::EmbedOracle;
use crate::rng::{ctx, fnv1a64_ids, stream_rng};
use crate::text::{detokenize, TokenSequence, Vocabulary};

/// How edit proposals are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guidance {
    /// Rank tokens by alignment with `target - current`. Sound when the
    /// attacked pooling is an average.
    Residual,
    /// Seeded random token samples, keyed by the candidate and position.
    Random,
}

impl Guidance {
    pub fn for_pooling(pooling: Pooling) -> Self {
        match pooling {
            Pooling::Mean => Guidance::Residual,
            Pooling::Recurrent => Guidance::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditKinds {
    pub substitute: bool,
    pub insert: bool,
    pub delete: bool,
}

impl Default for EditKinds {
    fn default() -> Self {
        EditKinds { substitute: true, insert: true, delete: true }
    }
}

impl EditKinds {
    pub fn substitute_only() -> Self {
        EditKinds { substitute: true, insert: false, delete: false }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InversionConfig {
    /// Beam-expansion rounds after the hypothesis stage.
    pub steps: usize,
    pub beam: usize,
    /// Tokens proposed per edit site.
    pub proposal_width: usize,
    pub max_len: usize,
    pub edit_kinds: EditKinds,
    /// Cap on oracle calls; the search returns its best-so-far when hit.
    pub budget: Option<u64>,
    pub seed: u64,
    pub guidance: Guidance,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 50,
            beam: 4,
            proposal_width: 8,
            max_len: 32,
            edit_kinds: EditKinds::default(),
            budget: None,
            seed: 0,
            guidance: Guidance::Residual,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::config("beam width must be >= 1".to_string()));
        }
        if self.proposal_width == 0 {
            return Err(Error::config("proposal width must be >= 1".to_string()));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Per-token embeddings gathered through the oracle: the attacker's
/// query-access precomputation. One oracle call per dense vocabulary id.
pub struct VocabProfile {
    rows: Vec<EmbeddingVector>,
    pub oracle_calls: u64,
}

impl VocabProfile {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: u32) -> &EmbeddingVector {
        &self.rows[id as usize]
    }
}

pub fn profile_vocabulary(vocab: &Vocabulary, oracle: &dyn EmbedOracle) -> Result<VocabProfile> {
    if vocab.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rows = Vec::with_capacity(vocab.len());
    for id in 0..vocab.len() as u32 {
        let surface = vocab.surface_of(id).expect("dense ids have surfaces");
        rows.push(oracle.embed_text(surface)?);
    }
    let calls = rows.len() as u64;
    Ok(VocabProfile { rows, oracle_calls: calls })
}

/// The beam-search state: a sequence, its oracle embedding, and its distance
/// to the target (`1 - cosine` under cosine, negated dot under dot).
#[derive(Debug, Clone)]
pub struct InversionCandidate {
    pub seq: TokenSequence,
    pub emb: EmbeddingVector,
    pub dist: f64,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub best: InversionCandidate,
    /// Best-ever distance after initialization and after each step;
    /// non-increasing by construction.
    pub trace: Vec<f64>,
    /// Oracle calls made by this search; must equal the oracle's own count.
    pub embed_calls: u64,
    /// True when the call budget stopped an evaluation.
    pub truncated: bool,
}

/// Minimization objective across both metrics.
pub fn target_distance(emb: &EmbeddingVector, target: &EmbeddingVector) -> Result<f64> {
    match target.metric() {
        Metric::Cosine => Ok(1.0 - similarity(emb, target, Metric::Cosine)?),
        Metric::Dot => Ok(-similarity(emb, target, Metric::Dot)?),
    }
}

const CONVERGED: f64 = 1e-6;

/// Oracle access with memoization, call accounting and budget enforcement.
struct Session<'a> {
    oracle: &'a dyn EmbedOracle,
    vocab: &'a Vocabulary,
    target: &'a EmbeddingVector,
    cache: HashMap<Vec<u32>, (f64, EmbeddingVector)>,
    calls: u64,
    budget: Option<u64>,
    truncated: bool,
}

impl<'a> Session<'a> {
    fn new(
        oracle: &'a dyn EmbedOracle,
        vocab: &'a Vocabulary,
        target: &'a EmbeddingVector,
        budget: Option<u64>,
    ) -> Self {
        Session { oracle, vocab, target, cache: HashMap::new(), calls: 0, budget, truncated: false }
    }

    fn remaining(&self) -> u64 {
        match self.budget {
            Some(b) => b.saturating_sub(self.calls),
            None => u64::MAX,
        }
    }

    /// Evaluate one sequence; `None` means the budget blocked the call.
    fn eval(&mut self, ids: &[u32]) -> Result<Option<(f64, EmbeddingVector)>> {
        if let Some(hit) = self.cache.get(ids) {
            return Ok(Some(hit.clone()));
        }
        if self.remaining() == 0 {
            self.truncated = true;
            return Ok(None);
        }
        let seq = TokenSequence::new(ids.to_vec())?;
        let text = detokenize(&seq, self.vocab)?;
        self.calls += 1;
        let emb = self.oracle.embed_text(&text)?;
        let dist = target_distance(&emb, self.target)?;
        self.cache.insert(ids.to_vec(), (dist, emb.clone()));
        Ok(Some((dist, emb)))
    }

    /// Evaluate many sequences, embedding cache misses in parallel and
    /// merging in input order. Stops (marking truncation) if the budget
    /// cannot cover all misses.
    fn eval_batch(&mut self, batch: &[Vec<u32>]) -> Result<Vec<(Vec<u32>, f64)>> {
        let mut misses: Vec<&Vec<u32>> = Vec::new();
        for ids in batch {
            if !self.cache.contains_key(ids) {
                misses.push(ids);
            }
        }
        let allowed = usize::try_from(self.remaining()).unwrap_or(usize::MAX);
        if misses.len() > allowed {
            self.truncated = true;
            misses.truncate(allowed);
        }
        let oracle = self.oracle;
        let vocab = self.vocab;
        let target = self.target;
        let fresh: Vec<(Vec<u32>, f64, EmbeddingVector)> = misses
            .par_iter()
            .map(|ids| {
                let seq = TokenSequence::new((*ids).clone())?;
                let text = detokenize(&seq, vocab)?;
                let emb = oracle.embed_text(&text)?;
                let dist = target_distance(&emb, target)?;
                Ok(((*ids).clone(), dist, emb))
            })
            .collect::<Result<Vec<_>>>()?;
        self.calls += fresh.len() as u64;
        for (ids, dist, emb) in fresh {
            self.cache.insert(ids, (dist, emb));
        }
        Ok(batch
            .iter()
            .filter_map(|ids| self.cache.get(ids).map(|(d, _)| (ids.clone(), *d)))
            .collect())
    }

    fn candidate(&self, ids: &[u32]) -> Option<InversionCandidate> {
        self.cache.get(ids).map(|(dist, emb)| InversionCandidate {
            seq: TokenSequence::new(ids.to_vec()).expect("cached sequences are non-empty"),
            emb: emb.clone(),
            dist: *dist,
        })
    }
}

/// Tokens ranked by cosine alignment between their profile embedding and
/// the residual direction; ties by ascending id. A degenerate residual
/// falls back to plain id order.
fn residual_window(profile: &VocabProfile, residual: &[f64], width: usize) -> Vec<u32> {
    let rnorm: f64 = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = profile.len();
    let mut scored: Vec<(f64, u32)> = Vec::with_capacity(n);
    for id in 0..n as u32 {
        let row = profile.row(id);
        let score = if rnorm < 1e-12 {
            0.0
        } else {
            let dot: f64 = row.components().iter().zip(residual).map(|(a, b)| a * b).sum();
            let nr = row.norm();
            if nr < 1e-12 {
                f64::NEG_INFINITY
            } else {
                dot / (nr * rnorm)
            }
        };
        scored.push((score, id));
    }
    scored.sort_by(|(sa, ia), (sb, ib)| sb.total_cmp(sa).then(ia.cmp(ib)));
    scored.truncate(width);
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Seeded random token sample for one `(sequence, site)` pair.
fn random_window(profile_len: usize, width: usize, seed: u64, ids: &[u32], site: u64) -> Vec<u32> {
    let key = fnv1a64_ids(ids, site);
    let mut rng = stream_rng(seed, ctx::PROPOSAL, key);
    let amount = width.min(profile_len);
    rand::seq::index::sample(&mut rng, profile_len, amount)
        .into_iter()
        .map(|i| i as u32)
        .collect()
}

fn window_for(
    cand_ids: &[u32],
    emb: Option<&EmbeddingVector>,
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
    site: u64,
) -> Vec<u32> {
    match cfg.guidance {
        Guidance::Residual => {
            let residual: Vec<f64> = match emb {
                Some(e) => target
                    .components()
                    .iter()
                    .zip(e.components())
                    .map(|(t, c)| t - c)
                    .collect(),
                None => target.components().to_vec(),
            };
            residual_window(profile, &residual, cfg.proposal_width)
        }
        Guidance::Random => random_window(profile.len(), cfg.proposal_width, cfg.seed, cand_ids, site),
    }
}

/// Greedy hypothesis: repeatedly append the proposal-window token whose
/// appended sequence is closest to the target; stop when nothing improves
/// or `max_len` is reached. Always emits at least one token.
pub fn hypothesize(
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<InversionCandidate> {
    cfg.validate()?;
    let mut session = Session::new(oracle, vocab, target, cfg.budget);
    let cand = hypothesize_in(&mut session, target, cfg, profile)?;
    Ok(cand)
}

fn hypothesize_in(
    session: &mut Session<'_>,
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
) -> Result<InversionCandidate> {
    let mut ids: Vec<u32> = Vec::new();
    let mut current: Option<(f64, EmbeddingVector)> = None;

    while ids.len() < cfg.max_len {
        let window = window_for(
            &ids,
            current.as_ref().map(|(_, e)| e),
            target,
            cfg,
            profile,
            ids.len() as u64,
        );
        let mut best_ext: Option<(f64, u32, EmbeddingVector)> = None;
        for token in window {
            let mut next = ids.clone();
            next.push(token);
            let Some((dist, emb)) = session.eval(&next)? else {
                break;
            };
            let better = match &best_ext {
                None => true,
                Some((bd, bt, _)) => dist < *bd || (dist == *bd && token < *bt),
            };
            if better {
                best_ext = Some((dist, token, emb));
            }
        }
        let Some((dist, token, emb)) = best_ext else {
            break;
        };
        let improved = match &current {
            None => true,
            Some((cur, _)) => dist < *cur,
        };
        if !improved {
            break;
        }
        ids.push(token);
        current = Some((dist, emb));
        if dist <= CONVERGED {
            break;
        }
    }

    let (dist, emb) = current.ok_or_else(|| {
        Error::arg("hypothesis stage could not evaluate any candidate (budget too small?)")
    })?;
    Ok(InversionCandidate { seq: TokenSequence::new(ids)?, emb, dist })
}

/// Deterministic edit proposals for one candidate: substitutions and
/// insertions from the guidance window at every site, plus deletions.
/// Deduplicated, in generation order.
pub fn propose_edits(
    cand: &InversionCandidate,
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
) -> Vec<TokenSequence> {
    let ids = cand.seq.ids();
    let len = ids.len();
    let mut seen: std::collections::HashSet<Vec<u32>> = std::collections::HashSet::new();
    let mut out: Vec<TokenSequence> = Vec::new();
    let mut push = |candidate: Vec<u32>, out: &mut Vec<TokenSequence>| {
        if !candidate.is_empty() && seen.insert(candidate.clone()) {
            out.push(TokenSequence::new(candidate).expect("non-empty"));
        }
    };

    for pos in 0..len {
        if cfg.edit_kinds.substitute {
            let window = window_for(ids, Some(&cand.emb), target, cfg, profile, pos as u64);
            for token in window {
                let mut next = ids.to_vec();
                next[pos] = token;
                push(next, &mut out);
            }
        }
        if cfg.edit_kinds.delete && len > 1 {
            let mut next = ids.to_vec();
            next.remove(pos);
            push(next, &mut out);
        }
    }
    if cfg.edit_kinds.insert && len < cfg.max_len {
        for pos in 0..=len {
            let window = window_for(ids, Some(&cand.emb), target, cfg, profile, (len + 1 + pos) as u64);
            for token in window {
                let mut next = ids.to_vec();
                next.insert(pos, token);
                push(next, &mut out);
            }
        }
    }
    out
}

fn rank_key(ids: &[u32], dist: f64) -> (f64, Vec<u32>) {
    (dist, ids.to_vec())
}

/// Full correction loop: hypothesis, beam seeding, per-step expansion and
/// truncation, early stop at convergence, best-ever tracking, and the
/// permutation-class tie-break under residual guidance.
pub fn correct(
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<InversionResult> {
    cfg.validate()?;
    let mut session = Session::new(oracle, vocab, target, cfg.budget);
    let hypothesis = hypothesize_in(&mut session, target, cfg, profile)?;

    if cfg.steps == 0 {
        let trace = vec![hypothesis.dist];
        return Ok(InversionResult {
            best: hypothesis,
            trace,
            embed_calls: session.calls,
            truncated: session.truncated,
        });
    }

    // Beam: hypothesis plus its first (beam - 1) distinct perturbations.
    let mut beam: Vec<(f64, Vec<u32>)> = vec![(hypothesis.dist, hypothesis.seq.ids().to_vec())];
    let perturbations: Vec<Vec<u32>> = propose_edits(&hypothesis, target, cfg, profile)
        .into_iter()
        .map(|s| s.ids().to_vec())
        .filter(|ids| ids != &beam[0].1)
        .take(cfg.beam - 1)
        .collect();
    for (ids, dist) in session.eval_batch(&perturbations)? {
        beam.push((dist, ids));
    }
    beam.sort_by(|(da, ia), (db, ib)| da.total_cmp(db).then(ia.cmp(ib)));

    let mut best = beam[0].clone();
    let mut trace = vec![best.0];

    for _step in 0..cfg.steps {
        if best.0 <= CONVERGED || session.truncated {
            break;
        }
        // expand every beam member; dedup proposals in deterministic order
        let mut proposals: Vec<Vec<u32>> = Vec::new();
        let mut seen: std::collections::HashSet<Vec<u32>> = beam.iter().map(|(_, i)| i.clone()).collect();
        for (_, ids) in &beam {
            let cand = session
                .candidate(ids)
                .expect("beam members are always cached");
            for seq in propose_edits(&cand, target, cfg, profile) {
                let ids = seq.ids().to_vec();
                if seen.insert(ids.clone()) {
                    proposals.push(ids);
                }
            }
        }
        let scored = session.eval_batch(&proposals)?;

        // pool: current beam plus evaluated proposals, unique by sequence
        let mut pool: Vec<(f64, Vec<u32>)> = beam.clone();
        pool.extend(scored.into_iter().map(|(ids, dist)| (dist, ids)));
        pool.sort_by(|(da, ia), (db, ib)| da.total_cmp(db).then(ia.cmp(ib)));
        pool.dedup_by(|a, b| a.1 == b.1);
        pool.truncate(cfg.beam);
        beam = pool;

        let head = beam[0].clone();
        if rank_key(&head.1, head.0) < rank_key(&best.1, best.0) {
            best = head;
        }
        trace.push(best.0);
    }

    // Mean pooling cannot distinguish permutations, so the lexicographic
    // tie-break extends to the permutation class of the winner. Verified
    // through the oracle like any other proposal.
    if cfg.guidance == Guidance::Residual {
        let mut sorted = best.1.clone();
        sorted.sort_unstable();
        if sorted != best.1 {
            if let Some((dist, _)) = session.eval(&sorted)? {
                if dist <= best.0 + 1e-12 && sorted < best.1 {
                    best = (dist.min(best.0), sorted);
                }
            }
        }
    }

    let best_cand = session
        .candidate(&best.1)
        .expect("best sequence was evaluated");
    // keep the trace's final entry equal to the returned distance
    if let Some(last) = trace.last_mut() {
        *last = (*last).min(best_cand.dist);
    }
    Ok(InversionResult {
        best: best_cand,
        trace,
        embed_calls: session.calls,
        truncated: session.truncated,
    })
}

/// Detokenized best reconstruction for a target embedding.
pub fn invert(
    target: &EmbeddingVector,
    cfg: &InversionConfig,
    profile: &VocabProfile,
    oracle: &dyn EmbedOracle,
    vocab: &Vocabulary,
) -> Result<String> {
    let result = correct(target, cfg, profile, oracle, vocab)?;
    detokenize(&result.best.seq, vocab)
}

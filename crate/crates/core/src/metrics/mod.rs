//! Reconstructibility and significance metrics: sentence-level BLEU,
//! multiset token F1, exact match, reconstruction cosine, and the paired
//! two-tailed t-test.

pub mod special;

use std::collections::HashMap;

use crate::embedder::{similarity, Metric};
use crate::error::{Error, Result};
use crate::oracle::EmbedOracle;
use crate::text::normalize_tokens;

/// Sentence-level BLEU in [0, 100].
///
/// Modified n-gram precisions for n = 1..4; orders above 1 get add-one
/// smoothing `(matches + 1) / (total + 1)` so the geometric mean is defined
/// for short texts, and `pred == ref` scores exactly 100. Brevity penalty
/// `exp(1 - r/c)` applies when the candidate is shorter than the reference.
/// Empty sides score 0 with a warning rather than erroring.
pub fn bleu(pred: &str, reference: &str) -> f64 {
    let pred_tokens = normalize_tokens(pred);
    let ref_tokens = normalize_tokens(reference);
    if pred_tokens.is_empty() || ref_tokens.is_empty() {
        log::warn!("bleu: empty side after normalization, scoring 0");
        return 0.0;
    }

    let mut log_sum = 0.0f64;
    for n in 1..=4usize {
        let total = pred_tokens.len().saturating_sub(n - 1);
        let matches = if total == 0 {
            0
        } else {
            clipped_ngram_matches(&pred_tokens, &ref_tokens, n)
        };
        let precision = if n == 1 {
            if matches == 0 {
                return 0.0;
            }
            matches as f64 / total as f64
        } else {
            (matches + 1) as f64 / (total + 1) as f64
        };
        log_sum += precision.ln();
    }
    let c = pred_tokens.len() as f64;
    let r = ref_tokens.len() as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    100.0 * brevity * (log_sum / 4.0).exp()
}

fn clipped_ngram_matches(pred: &[String], reference: &[String], n: usize) -> usize {
    if reference.len() < n {
        return 0;
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut pred_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in pred.windows(n) {
        *pred_counts.entry(gram).or_insert(0) += 1;
    }
    pred_counts
        .into_iter()
        .map(|(gram, count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// Multiset token F1 in [0, 1]. Overlap is the sum of per-token minimum
/// counts, so repetition spam is penalized.
pub fn token_f1(pred: &str, reference: &str) -> Result<f64> {
    let ref_tokens = normalize_tokens(reference);
    if ref_tokens.is_empty() {
        return Err(Error::EmptyInput("token_f1 reference"));
    }
    let pred_tokens = normalize_tokens(pred);
    if pred_tokens.is_empty() {
        return Ok(0.0);
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &ref_tokens {
        *ref_counts.entry(t).or_insert(0) += 1;
    }
    let mut pred_counts: HashMap<&str, usize> = HashMap::new();
    for t in &pred_tokens {
        *pred_counts.entry(t).or_insert(0) += 1;
    }
    let overlap: usize = pred_counts
        .iter()
        .map(|(t, c)| c.min(ref_counts.get(t).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let p = overlap as f64 / pred_tokens.len() as f64;
    let r = overlap as f64 / ref_tokens.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// 1 iff the normalized token sequences are identical.
pub fn exact_match(pred: &str, reference: &str) -> bool {
    normalize_tokens(pred) == normalize_tokens(reference)
}

/// Cosine between the embeddings of the two texts, regardless of the
/// pipeline's own metric.
pub fn recon_cosine(pred: &str, reference: &str, oracle: &dyn EmbedOracle) -> Result<f64> {
    let a = oracle.embed_text(pred)?;
    let b = oracle.embed_text(reference)?;
    similarity(&a, &b, Metric::Cosine)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub bleu: f64,
    pub tf1: f64,
    pub exact: f64,
    pub cos: f64,
    pub n_samples: usize,
}

/// Per-metric means over (prediction, reference) pairs.
pub fn aggregate(pairs: &[(String, String)], oracle: &dyn EmbedOracle) -> Result<ReconstructionReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("reconstruction pairs"));
    }
    let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (pred, reference) in pairs {
        sums.0 += bleu(pred, reference);
        sums.1 += token_f1(pred, reference)?;
        sums.2 += f64::from(exact_match(pred, reference));
        sums.3 += recon_cosine(pred, reference, oracle)?;
    }
    let n = pairs.len() as f64;
    Ok(ReconstructionReport {
        bleu: sums.0 / n,
        tf1: sums.1 / n,
        exact: sums.2 / n,
        cos: sums.3 / n,
        n_samples: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    /// Two-tailed p-value.
    pub p: f64,
    /// Significance at the p < 0.01 threshold.
    pub significant_at_01: bool,
}

/// Paired two-tailed Student t-test on per-query score vectors. All-zero
/// differences give `t = 0, p = 1` exactly instead of dividing by zero.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::arg("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(TTestResult { t: 0.0, df, p: 1.0, significant_at_01: false });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / df as f64;
    if var == 0.0 {
        // constant non-zero difference: infinitely significant
        let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Ok(TTestResult { t, df, p: 0.0, significant_at_01: true });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = special::student_t_two_tailed_p(t, df);
    Ok(TTestResult { t, df, p, significant_at_01: p < 0.01 })
}

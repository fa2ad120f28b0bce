//! Product quantization.
//!
//! A vector of dimension `d` is split into `m` contiguous sub-vectors of
//! `d/m` components. Each subspace carries its own codebook of `2^bits`
//! centroids trained by seeded k-means; a stored vector is the sequence of
//! its nearest centroid indexes. Search uses asymmetric distance
//! computation: per-subspace lookup tables of query/centroid dot products,
//! summed per code, which equals scoring the decoded vector under dot. Under
//! cosine, decoded vectors are renormalized via per-centroid squared norms.

use rayon::prelude::*;

use crate::embedder::{EmbeddingVector, Metric};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::rng::fnv1a64;

use super::{rank_and_truncate, SearchIndex, BYTES_PER_REAL};

/// Per-subspace centroid tables.
#[derive(Debug, Clone)]
pub struct PQCodebook {
    m: usize,
    bits: u8,
    dim: usize,
    metric: Metric,
    /// `m * 2^bits * (dim/m)` reals; table `j` starts at `j * 2^bits * sub`.
    centroids: Vec<f64>,
}

impl PQCodebook {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn k(&self) -> usize {
        1usize << self.bits
    }

    pub fn sub_dim(&self) -> usize {
        self.dim / self.m
    }

    pub fn centroid(&self, subspace: usize, code: usize) -> &[f64] {
        let sub = self.sub_dim();
        let base = (subspace * self.k() + code) * sub;
        &self.centroids[base..base + sub]
    }

    pub(crate) fn from_parts(
        m: usize,
        bits: u8,
        dim: usize,
        metric: Metric,
        centroids: Vec<f64>,
    ) -> Result<Self> {
        if bits == 0 || bits > 8 {
            return Err(Error::config(format!("bits per sub-vector must be 1..=8, got {bits}")));
        }
        if m == 0 || dim % m != 0 {
            return Err(Error::config(format!(
                "dimension {dim} not divisible into {m} sub-vectors"
            )));
        }
        let expected = m * (1usize << bits) * (dim / m);
        if centroids.len() != expected {
            return Err(Error::BadFormat(format!(
                "codebook has {} reals, expected {expected}",
                centroids.len()
            )));
        }
        Ok(PQCodebook { m, bits, dim, metric, centroids })
    }
}

/// A quantized vector: one centroid index per subspace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PQCode {
    codes: Vec<u8>,
}

impl PQCode {
    pub fn new(codes: Vec<u8>) -> Self {
        PQCode { codes }
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
}

/// Train per-subspace codebooks with seeded k-means++ and a fixed Lloyd
/// iteration cap. Deterministic in `(embeddings, m, bits, iters, seed)`.
pub fn train_pq(
    embeddings: &[EmbeddingVector],
    m: usize,
    bits: u8,
    iters: usize,
    seed: u64,
) -> Result<PQCodebook> {
    let first = embeddings.first().ok_or(Error::EmptyInput("pq training embeddings"))?;
    let dim = first.dim();
    let metric = first.metric();
    if bits == 0 || bits > 8 {
        return Err(Error::config(format!("bits per sub-vector must be 1..=8, got {bits}")));
    }
    if m == 0 || dim % m != 0 {
        return Err(Error::config(format!(
            "dimension {dim} not divisible into {m} sub-vectors"
        )));
    }
    for v in embeddings {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
        }
    }
    let sub = dim / m;
    let k = 1usize << bits;

    let tables: Vec<Vec<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let slices: Vec<&[f64]> = embeddings
                .iter()
                .map(|v| &v.components()[j * sub..(j + 1) * sub])
                .collect();
            let sub_seed = seed ^ fnv1a64(&(j as u64).to_le_bytes());
            kmeans::run(&slices, k, iters, sub_seed).map(|out| out.centroids)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut centroids = Vec::with_capacity(m * k * sub);
    for table in tables {
        for c in table {
            centroids.extend(c);
        }
    }
    PQCodebook::from_parts(m, bits, dim, metric, centroids)
}

/// Nearest centroid per subspace (Euclidean, ties to the lowest index).
pub fn pq_encode(codebook: &PQCodebook, v: &EmbeddingVector) -> Result<PQCode> {
    if v.dim() != codebook.dim() {
        return Err(Error::DimensionMismatch { expected: codebook.dim(), got: v.dim() });
    }
    let sub = codebook.sub_dim();
    let mut codes = Vec::with_capacity(codebook.m());
    for j in 0..codebook.m() {
        let target = &v.components()[j * sub..(j + 1) * sub];
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..codebook.k() {
            let cent = codebook.centroid(j, c);
            let d: f64 = cent
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        codes.push(best as u8);
    }
    Ok(PQCode::new(codes))
}

/// Concatenate the code's centroids. The result is returned raw (cosine
/// pipelines renormalize where the decoded vector is scored or attacked).
pub fn pq_decode(codebook: &PQCodebook, code: &PQCode) -> Result<EmbeddingVector> {
    if code.codes().len() != codebook.m() {
        return Err(Error::DimensionMismatch { expected: codebook.m(), got: code.codes().len() });
    }
    let mut out = Vec::with_capacity(codebook.dim());
    for (j, &c) in code.codes().iter().enumerate() {
        if (c as usize) >= codebook.k() {
            return Err(Error::BadFormat(format!("code {c} out of range for {} bits", codebook.bits())));
        }
        out.extend_from_slice(codebook.centroid(j, c as usize));
    }
    EmbeddingVector::new(out, codebook.metric())
}

/// A compressed index: codebook plus per-document codes.
#[derive(Debug, Clone)]
pub struct PQIndex {
    ids: Vec<u64>,
    codes: Vec<PQCode>,
    codebook: PQCodebook,
}

impl PQIndex {
    pub fn build(items: &[(u64, EmbeddingVector)], codebook: PQCodebook) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyInput("index embeddings"));
        }
        let mut ids = Vec::with_capacity(items.len());
        let mut seen = std::collections::HashSet::with_capacity(items.len());
        let codes = items
            .iter()
            .map(|(id, v)| {
                if !seen.insert(*id) {
                    return Err(Error::DuplicateDocId(*id));
                }
                ids.push(*id);
                pq_encode(&codebook, v)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PQIndex { ids, codes, codebook })
    }

    pub(crate) fn from_parts(ids: Vec<u64>, codes: Vec<PQCode>, codebook: PQCodebook) -> Self {
        PQIndex { ids, codes, codebook }
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn codes(&self) -> &[PQCode] {
        &self.codes
    }

    pub fn codebook(&self) -> &PQCodebook {
        &self.codebook
    }

    /// Decoded stored vector for a doc id (raw concatenated centroids).
    pub fn decoded_of(&self, id: u64) -> Option<Result<EmbeddingVector>> {
        let i = self.ids.iter().position(|&x| x == id)?;
        Some(pq_decode(&self.codebook, &self.codes[i]))
    }

    /// Per-document code bytes (the `m * bits / 8` accounting unit).
    pub fn code_bytes_per_doc(&self) -> u64 {
        (self.codebook.m() as u64 * u64::from(self.codebook.bits())).div_ceil(8)
    }

    pub fn codebook_bytes(&self) -> u64 {
        (1u64 << self.codebook.bits()) * self.codebook.dim() as u64 * BYTES_PER_REAL
    }
}

impl SearchIndex for PQIndex {
    /// Asymmetric distance computation over per-subspace lookup tables.
    fn search(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<(u64, f64)>> {
        if n == 0 {
            return Err(Error::arg("search requires n >= 1"));
        }
        let cb = &self.codebook;
        if query.dim() != cb.dim() {
            return Err(Error::DimensionMismatch { expected: cb.dim(), got: query.dim() });
        }
        let sub = cb.sub_dim();
        let k = cb.k();
        // dot(query_sub, centroid) table, plus centroid squared norms for
        // cosine renormalization of decoded vectors.
        let mut dot_table = vec![0.0f64; cb.m() * k];
        let mut norm_table = vec![0.0f64; cb.m() * k];
        for j in 0..cb.m() {
            let q = &query.components()[j * sub..(j + 1) * sub];
            for c in 0..k {
                let cent = cb.centroid(j, c);
                let mut dot = 0.0f64;
                let mut nrm = 0.0f64;
                for (a, b) in cent.iter().zip(q) {
                    dot += a * b;
                    nrm += a * a;
                }
                dot_table[j * k + c] = dot;
                norm_table[j * k + c] = nrm;
            }
        }
        let qn = query.norm();
        if cb.metric() == Metric::Cosine && qn < 1e-12 {
            return Err(Error::DegenerateNorm);
        }
        let mut scored = Vec::with_capacity(self.ids.len());
        for (i, &id) in self.ids.iter().enumerate() {
            let mut dot = 0.0f64;
            let mut nrm2 = 0.0f64;
            for (j, &c) in self.codes[i].codes().iter().enumerate() {
                dot += dot_table[j * k + c as usize];
                nrm2 += norm_table[j * k + c as usize];
            }
            let score = match cb.metric() {
                Metric::Dot => dot,
                Metric::Cosine => {
                    let vn = nrm2.sqrt();
                    if vn < 1e-12 {
                        return Err(Error::DegenerateNorm);
                    }
                    (dot / (qn * vn)).clamp(-1.0, 1.0)
                }
            };
            scored.push((id, score));
        }
        Ok(rank_and_truncate(scored, n))
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn dim(&self) -> usize {
        self.codebook.dim()
    }

    fn metric(&self) -> Metric {
        self.codebook.metric()
    }

    /// Codes plus codebook bytes.
    fn size_bytes(&self) -> u64 {
        self.ids.len() as u64 * self.code_bytes_per_doc() + self.codebook_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_exact;

    /// Grid dataset: every component takes one of `levels` distinct values,
    /// so 8-bit-per-dimension quantization can represent it exactly.
    fn grid_embeddings(n: usize, dim: usize, levels: usize, metric: Metric) -> Vec<EmbeddingVector> {
        (0..n)
            .map(|i| {
                let comps: Vec<f64> = (0..dim)
                    .map(|d| {
                        let level = (i * 31 + d * 17 + i * d) % levels;
                        -1.0 + 2.0 * level as f64 / (levels - 1) as f64
                    })
                    .collect();
                EmbeddingVector::new(comps, metric).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_cover_round_trips_bit_exactly() {
        // m = d with <= 256 distinct per-dimension values: decode(encode(v)) = v.
        let data = grid_embeddings(300, 8, 16, Metric::Dot);
        let cb = train_pq(&data, 8, 8, 25, 3).unwrap();
        for v in &data {
            let decoded = pq_decode(&cb, &pq_encode(&cb, v).unwrap()).unwrap();
            assert_eq!(v.components(), decoded.components());
        }
    }

    #[test]
    fn encode_of_decode_is_identity_on_codes() {
        let data = grid_embeddings(200, 16, 11, Metric::Dot);
        let cb = train_pq(&data, 4, 8, 15, 9).unwrap();
        for v in data.iter().take(32) {
            let code = pq_encode(&cb, v).unwrap();
            let decoded = pq_decode(&cb, &code).unwrap();
            let again = pq_encode(&cb, &decoded).unwrap();
            assert_eq!(code, again);
        }
    }

    #[test]
    fn decode_picks_nearest_centroid_per_subspace() {
        let data = grid_embeddings(150, 8, 9, Metric::Dot);
        let cb = train_pq(&data, 4, 4, 20, 1).unwrap();
        let v = &data[7];
        let code = pq_encode(&cb, v).unwrap();
        let sub = cb.sub_dim();
        for (j, &assigned) in code.codes().iter().enumerate() {
            let target = &v.components()[j * sub..(j + 1) * sub];
            let chosen: f64 = cb
                .centroid(j, assigned as usize)
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            for c in 0..cb.k() {
                let alt: f64 = cb
                    .centroid(j, c)
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(chosen <= alt + 1e-12);
            }
        }
    }

    #[test]
    fn zero_iteration_codebook_uses_seed_points() {
        let data = grid_embeddings(64, 8, 5, Metric::Dot);
        let cb = train_pq(&data, 2, 3, 0, 5).unwrap();
        // every centroid must be one of the training sub-vectors
        let sub = cb.sub_dim();
        for j in 0..cb.m() {
            for c in 0..cb.k() {
                let cent = cb.centroid(j, c);
                let found = data
                    .iter()
                    .any(|v| &v.components()[j * sub..(j + 1) * sub] == cent);
                assert!(found, "centroid ({j},{c}) is not a training sub-vector");
            }
        }
    }

    #[test]
    fn indivisible_dimension_is_rejected() {
        let data = grid_embeddings(10, 9, 4, Metric::Dot);
        assert!(train_pq(&data, 2, 8, 5, 0).is_err());
    }

    #[test]
    fn adc_equals_decoded_dot_scoring() {
        let data = grid_embeddings(120, 16, 50, Metric::Dot);
        let cb = train_pq(&data, 4, 6, 20, 2).unwrap();
        let items: Vec<(u64, EmbeddingVector)> = data
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u64, v.clone()))
            .collect();
        let idx = PQIndex::build(&items, cb.clone()).unwrap();
        let query = &data[3];
        let hits = idx.search(query, items.len()).unwrap();
        for (id, score) in hits {
            let decoded = idx.decoded_of(id).unwrap().unwrap();
            let direct: f64 = decoded
                .components()
                .iter()
                .zip(query.components())
                .map(|(a, b)| a * b)
                .sum();
            assert!((score - direct).abs() < 1e-6, "ADC {score} vs decoded {direct}");
        }
    }

    #[test]
    fn exact_cover_ranking_matches_exact_index() {
        let metric = Metric::Dot;
        let data = grid_embeddings(180, 8, 12, metric);
        let cb = train_pq(&data, 8, 8, 25, 7).unwrap();
        let items: Vec<(u64, EmbeddingVector)> = data
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u64, v.clone()))
            .collect();
        let pq = PQIndex::build(&items, cb).unwrap();
        let exact = build_exact(&items, metric).unwrap();
        for q in data.iter().step_by(23) {
            let a = pq.search(q, items.len()).unwrap();
            let b = exact.search(q, items.len()).unwrap();
            let a_ids: Vec<u64> = a.iter().map(|(id, _)| *id).collect();
            let b_ids: Vec<u64> = b.iter().map(|(id, _)| *id).collect();
            assert_eq!(a_ids, b_ids, "full ranked lists must agree under exact cover");
        }
    }

    #[test]
    fn singleton_corpus_search() {
        let data = grid_embeddings(40, 8, 6, Metric::Dot);
        let cb = train_pq(&data, 2, 4, 10, 0).unwrap();
        let idx = PQIndex::build(&[(11, data[0].clone())], cb).unwrap();
        let hits = idx.search(&data[0], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, 11);
    }

    #[test]
    fn pq_size_accounting() {
        // 1000 docs, d=64, m=16, bits=8: codes 16,000 bytes, codebook 65,536.
        let data = grid_embeddings(64, 64, 7, Metric::Dot);
        let cb = train_pq(&data, 16, 8, 1, 0).unwrap();
        let items: Vec<(u64, EmbeddingVector)> = (0..1000u64)
            .map(|i| (i, data[(i % 64) as usize].clone()))
            .collect();
        let idx = PQIndex::build(&items, cb).unwrap();
        assert_eq!(idx.code_bytes_per_doc() * 1000, 16_000);
        assert_eq!(idx.codebook_bytes(), 65_536);
        assert_eq!(idx.size_bytes(), 16_000 + 65_536);
    }

    #[test]
    fn quantization_error_non_increasing_in_m() {
        // fixed data and seed, m in {1,2,4,8,16}: finer partitions quantize
        // at least as well.
        let mut rng = crate::rng::stream_rng(3, crate::rng::ctx::SAMPLE, 77);
        let data: Vec<EmbeddingVector> = (0..256)
            .map(|_| {
                EmbeddingVector::new(crate::rng::normal_vector(&mut rng, 16, 1.0), Metric::Dot)
                    .unwrap()
            })
            .collect();
        let mut last = f64::INFINITY;
        for m in [1usize, 2, 4, 8, 16] {
            let cb = train_pq(&data, m, 4, 25, 11).unwrap();
            let err: f64 = data
                .iter()
                .map(|v| {
                    let d = pq_decode(&cb, &pq_encode(&cb, v).unwrap()).unwrap();
                    v.components()
                        .iter()
                        .zip(d.components())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum();
            assert!(
                err <= last + 1e-9,
                "quantization error rose from {last} to {err} at m={m}"
            );
            last = err;
        }
    }
}

//! Binary persistence.
//!
//! Index file layout (little-endian throughout, reals stored as f32):
//!   magic "EIDX1" | metric u8 (0=dot, 1=cosine) | kind u8 (0=exact, 1=pq)
//!   | dim u32 | count u64
//!   exact: count*dim reals, row-major
//!   pq:    m u32 | bits u8 | codebook (m * 2^bits * dim/m reals)
//!          | codes (count * m bytes)
//! Doc ids are implicit row positions 0..count.
//!
//! Embedding files use magic "EVEC1" | metric u8 | dim u32 | dim reals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedder::{EmbeddingVector, Metric};
use crate::error::{Error, Result};

use super::pq::{PQCode, PQCodebook, PQIndex};
use super::{build_exact, ExactIndex, SearchIndex};

const INDEX_MAGIC: &[u8; 5] = b"EIDX1";
const VECTOR_MAGIC: &[u8; 5] = b"EVEC1";

pub enum IndexFile {
    Exact(ExactIndex),
    Pq(PQIndex),
}

impl IndexFile {
    pub fn as_search_index(&self) -> &dyn SearchIndex {
        match self {
            IndexFile::Exact(i) => i,
            IndexFile::Pq(i) => i,
        }
    }
}

fn metric_byte(metric: Metric) -> u8 {
    match metric {
        Metric::Dot => 0,
        Metric::Cosine => 1,
    }
}

fn metric_from(byte: u8) -> Result<Metric> {
    match byte {
        0 => Ok(Metric::Dot),
        1 => Ok(Metric::Cosine),
        other => Err(Error::BadFormat(format!("unknown metric byte {other}"))),
    }
}

fn write_reals(w: &mut impl Write, reals: impl Iterator<Item = f64>) -> Result<()> {
    for r in reals {
        w.write_all(&(r as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_reals(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

pub fn write_exact(index: &ExactIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&[metric_byte(index.metric()), 0u8])?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    for i in 0..index.len() {
        write_reals(&mut w, index.row(i).iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pq(index: &PQIndex, path: &Path) -> Result<()> {
    let cb = index.codebook();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&[metric_byte(cb.metric()), 1u8])?;
    w.write_all(&(cb.dim() as u32).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    w.write_all(&(cb.m() as u32).to_le_bytes())?;
    w.write_all(&[cb.bits()])?;
    for j in 0..cb.m() {
        for c in 0..cb.k() {
            write_reals(&mut w, cb.centroid(j, c).iter().copied())?;
        }
    }
    for code in index.codes() {
        w.write_all(code.codes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read either index layout; ids come back as row positions.
pub fn read_index(path: &Path) -> Result<IndexFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::BadFormat("not an index file".into()));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let metric = metric_from(head[0])?;
    let kind = head[1];
    let mut dim4 = [0u8; 4];
    r.read_exact(&mut dim4)?;
    let dim = u32::from_le_bytes(dim4) as usize;
    let mut cnt8 = [0u8; 8];
    r.read_exact(&mut cnt8)?;
    let count = u64::from_le_bytes(cnt8) as usize;
    if dim == 0 || count == 0 {
        return Err(Error::BadFormat("empty index file".into()));
    }

    match kind {
        0 => {
            let mut items = Vec::with_capacity(count);
            for i in 0..count {
                let row = read_reals(&mut r, dim)?;
                items.push((i as u64, EmbeddingVector::new(row, metric)?));
            }
            Ok(IndexFile::Exact(build_exact(&items, metric)?))
        }
        1 => {
            let mut m4 = [0u8; 4];
            r.read_exact(&mut m4)?;
            let m = u32::from_le_bytes(m4) as usize;
            let mut bits1 = [0u8; 1];
            r.read_exact(&mut bits1)?;
            let bits = bits1[0];
            if m == 0 || dim % m != 0 {
                return Err(Error::BadFormat(format!("bad pq geometry m={m} dim={dim}")));
            }
            let k = 1usize
                .checked_shl(u32::from(bits))
                .ok_or_else(|| Error::BadFormat("bad bits".into()))?;
            let centroids = read_reals(&mut r, m * k * (dim / m))?;
            let codebook = PQCodebook::from_parts(m, bits, dim, metric, centroids)?;
            let mut codes = Vec::with_capacity(count);
            let mut ids = Vec::with_capacity(count);
            for i in 0..count {
                let mut c = vec![0u8; m];
                r.read_exact(&mut c)?;
                if c.iter().any(|&x| (x as usize) >= k) {
                    return Err(Error::BadFormat("code out of range".into()));
                }
                codes.push(PQCode::new(c));
                ids.push(i as u64);
            }
            Ok(IndexFile::Pq(PQIndex::from_parts(ids, codes, codebook)))
        }
        other => Err(Error::BadFormat(format!("unknown index kind {other}"))),
    }
}

pub fn write_embedding(v: &EmbeddingVector, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VECTOR_MAGIC)?;
    w.write_all(&[metric_byte(v.metric())])?;
    w.write_all(&(v.dim() as u32).to_le_bytes())?;
    write_reals(&mut w, v.components().iter().copied())?;
    w.flush()?;
    Ok(())
}

pub fn read_embedding(path: &Path) -> Result<EmbeddingVector> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != VECTOR_MAGIC {
        return Err(Error::BadFormat("not an embedding file".into()));
    }
    let mut mb = [0u8; 1];
    r.read_exact(&mut mb)?;
    let metric = metric_from(mb[0])?;
    let mut dim4 = [0u8; 4];
    r.read_exact(&mut dim4)?;
    let dim = u32::from_le_bytes(dim4) as usize;
    if dim == 0 {
        return Err(Error::BadFormat("empty embedding".into()));
    }
    let comps = read_reals(&mut r, dim)?;
    EmbeddingVector::new(comps, metric)
}

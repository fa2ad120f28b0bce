//! Seeded, keyed random streams.
//!
//! Every random quantity in this crate is drawn from a stream addressed by
//! `(seed, context, key)`. Streams are independent of call order and of each
//! other, which is what makes embeddings, noise and clustering reproducible
//! across runs and threads. The mixing below is for stream separation only,
//! not cryptography.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream contexts. Each independent consumer of randomness gets its own
/// constant so identical `(seed, key)` pairs in different roles never alias.
pub mod ctx {
    pub const TOKEN: u64 = 0x01;
    pub const MIXER: u64 = 0x02;
    pub const INITIAL_STATE: u64 = 0x03;
    pub const PROJECTION: u64 = 0x04;
    pub const NOISE_DOC: u64 = 0x05;
    pub const NOISE_QUERY: u64 = 0x06;
    pub const KMEANS: u64 = 0x07;
    pub const PROPOSAL: u64 = 0x08;
    pub const FLIP_INIT: u64 = 0x09;
    pub const SAMPLE: u64 = 0x0a;
    pub const SYNTH: u64 = 0x0b;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha stream fully determined by `(seed, context, key)`.
pub fn stream_rng(seed: u64, context: u64, key: u64) -> ChaCha8Rng {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    state ^= context.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let _ = splitmix64(&mut state);
    state ^= key.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// FNV-1a over arbitrary bytes. Used for content-addressed stream keys and
/// out-of-vocabulary token ids; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// FNV-1a over a token-id sequence plus a salt, for proposal stream keys.
pub fn fnv1a64_ids(ids: &[u32], salt: u64) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &id in ids {
        for b in id.to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    for b in salt.to_le_bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// `dim` iid standard normal draws scaled by `scale`.
pub fn normal_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Row-major matrix with orthonormal rows, built from seeded Gaussian rows by
/// two passes of modified Gram-Schmidt. Requires `rows <= cols`.
pub fn orthonormal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    assert!(rows <= cols, "cannot orthonormalize {rows} rows in {cols} dims");
    let mut m: Vec<f64> = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        m.extend(normal_vector(rng, cols, 1.0));
    }
    for _pass in 0..2 {
        for i in 0..rows {
            for j in 0..i {
                let dot: f64 = (0..cols).map(|c| m[i * cols + c] * m[j * cols + c]).sum();
                for c in 0..cols {
                    m[i * cols + c] -= dot * m[j * cols + c];
                }
            }
            let norm: f64 = (0..cols)
                .map(|c| m[i * cols + c] * m[i * cols + c])
                .sum::<f64>()
                .sqrt();
            assert!(norm > 1e-12, "degenerate Gaussian row during orthonormalization");
            for c in 0..cols {
                m[i * cols + c] /= norm;
            }
        }
    }
    m
}

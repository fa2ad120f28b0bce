//! Seeded orthonormal dimension reduction.

use crate::embedder::{EmbeddingVector, Metric};
use crate::error::{Error, Result};
use crate::oracle::EmbedOracle;
use crate::rng::{ctx, orthonormal_rows, stream_rng};

/// A `target_dim x d` matrix with orthonormal rows.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    rows: Vec<f64>,
    target_dim: usize,
    input_dim: usize,
}

impl ProjectionMatrix {
    /// Seeded construction: Gaussian rows, orthonormalized.
    pub fn seeded(input_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        if target_dim == 0 || target_dim >= input_dim {
            return Err(Error::arg(format!(
                "target dimension must be in 1..{input_dim}, got {target_dim}"
            )));
        }
        let mut rng = stream_rng(seed, ctx::PROJECTION, 0);
        let rows = orthonormal_rows(&mut rng, target_dim, input_dim);
        Ok(ProjectionMatrix { rows, target_dim, input_dim })
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r * self.input_dim..(r + 1) * self.input_dim]
    }

    /// `P v`, renormalized under the cosine metric.
    pub fn project(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        if v.dim() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: v.dim() });
        }
        let mut out = vec![0.0f64; self.target_dim];
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = self
                .row(r)
                .iter()
                .zip(v.components())
                .map(|(m, x)| m * x)
                .sum();
        }
        let projected = EmbeddingVector::new(out, v.metric())?;
        match v.metric() {
            Metric::Dot => Ok(projected),
            Metric::Cosine => projected.normalized(),
        }
    }
}

/// Train a projection for the dimension of the given embeddings. The matrix
/// itself is data-independent (seeded), the embeddings fix `d` and catch
/// dimension mismatches early.
pub fn train_projection(
    embeddings: &[EmbeddingVector],
    target_dim: usize,
    seed: u64,
) -> Result<ProjectionMatrix> {
    let first = embeddings.first().ok_or(Error::EmptyInput("embeddings"))?;
    ProjectionMatrix::seeded(first.dim(), target_dim, seed)
}

/// An oracle whose outputs are projected; this is the API surface of a
/// reduced-dimension pipeline.
pub struct ProjectedEmbedder<O> {
    base: O,
    matrix: ProjectionMatrix,
}

impl<O: EmbedOracle> ProjectedEmbedder<O> {
    pub fn new(base: O, matrix: ProjectionMatrix) -> Self {
        ProjectedEmbedder { base, matrix }
    }

    pub fn matrix(&self) -> &ProjectionMatrix {
        &self.matrix
    }
}

impl<O: EmbedOracle> EmbedOracle for ProjectedEmbedder<O> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let v = self.base.embed_text(text)?;
        self.matrix.project(&v)
    }
}

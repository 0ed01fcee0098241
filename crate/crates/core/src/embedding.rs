//! Unit-length face embeddings and the similarity measures built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default dimensionality of embeddings produced by the synthetic providers.
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A face representation with unit L2 norm.
///
/// Construction always normalizes, so cosine similarity between two
/// embeddings reduces to a dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FaceEmbedding {
    values: Vec<f64>,
}

impl FaceEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &FaceEmbedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::dim(self.dim(), other.dim()));
        }
        Ok(dot(&self.values, &other.values))
    }
}

impl TryFrom<Vec<f64>> for FaceEmbedding {
    type Error = Error;

    /// Stored vectors that are already unit length are kept bit-for-bit so
    /// that files round-trip exactly; anything else is normalized.
    fn try_from(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Normalization);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
            Ok(FaceEmbedding { values })
        } else {
            normalize(&values)
        }
    }
}

impl From<FaceEmbedding> for Vec<f64> {
    fn from(e: FaceEmbedding) -> Self {
        e.values
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<FaceEmbedding> {
    let norm = l2_norm(v);
    if v.is_empty() || norm == 0.0 || !norm.is_finite() {
        return Err(Error::Normalization);
    }
    Ok(FaceEmbedding {
        values: v.iter().map(|x| x / norm).collect(),
    })
}

/// Cosine similarity of two embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &FaceEmbedding, b: &FaceEmbedding) -> Result<f64> {
    Ok(a.dot(b)?.clamp(-1.0, 1.0))
}

/// Cosine similarity of two raw (not necessarily normalized) vectors.
pub fn raw_cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        return Err(Error::Normalization);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Component-wise average of `faces`, re-normalized to unit length.
pub fn mean_embedding<'a, I>(faces: I) -> Result<FaceEmbedding>
where
    I: IntoIterator<Item = &'a FaceEmbedding>,
{
    let mut iter = faces.into_iter();
    let first = iter.next().ok_or(Error::EmptySet("mean of zero embeddings"))?;
    let mut sum = first.values.clone();
    let mut count = 1usize;
    for face in iter {
        if face.dim() != sum.len() {
            return Err(Error::dim(sum.len(), face.dim()));
        }
        for (s, v) in sum.iter_mut().zip(&face.values) {
            *s += v;
        }
        count += 1;
    }
    let n = count as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    normalize(&sum)
}

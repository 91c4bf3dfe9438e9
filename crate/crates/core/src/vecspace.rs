//! Vector storage, normalization, and the angular distance kernel.
//!
//! Vectors are stored as 32-bit floats; every distance and norm accumulates
//! in 64-bit. Normalization happens once at ingestion and the clustering
//! algorithms assume it.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VecError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("non-finite component at position {position}")]
    NonFinite { position: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("row {row} has {got} components, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("dataset has no vectors")]
    EmptyDataset,
    #[error("cosine distance {value} outside [0, 2]")]
    CosineOutOfRange { value: f64 },
}

/// Distance function used for range queries and nearest-core assignment.
///
/// `EuclideanEquivalent` is only meaningful on normalized vectors, where
/// `d_euc = sqrt(2 * d_cos)` makes the two metrics interchangeable up to a
/// threshold conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    #[default]
    Cosine,
    EuclideanEquivalent,
}

impl DistanceMetric {
    pub fn distance(&self, u: &[f32], v: &[f32]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        match self {
            DistanceMetric::Cosine => {
                let dot: f64 = u
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum();
                (1.0 - dot).clamp(0.0, 2.0)
            }
            DistanceMetric::EuclideanEquivalent => {
                let sq: f64 = u
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| {
                        let d = f64::from(a) - f64::from(b);
                        d * d
                    })
                    .sum();
                sq.sqrt()
            }
        }
    }
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::Cosine => write!(f, "cosine"),
            DistanceMetric::EuclideanEquivalent => write!(f, "euclidean-equivalent"),
        }
    }
}

/// An immutable collection of fixed-dimension vectors addressed by index.
///
/// Construction validates that every row has the same dimension and only
/// finite components; indices are stable afterwards. The struct is plain
/// data and safe to share across worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Builds a dataset from row vectors without normalizing them.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, VecError> {
        let Some(first) = rows.first() else {
            return Err(VecError::EmptyDataset);
        };
        let dim = first.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, v) in rows.iter().enumerate() {
            if v.len() != dim {
                return Err(VecError::RaggedRow {
                    row,
                    expected: dim,
                    got: v.len(),
                });
            }
            for (position, &x) in v.iter().enumerate() {
                if !x.is_finite() {
                    return Err(VecError::NonFinite { position });
                }
                data.push(x);
            }
            let _ = row;
        }
        Ok(Dataset { dim, data })
    }

    /// Builds a dataset with every row normalized to unit L2 norm.
    ///
    /// Normalization runs in 64-bit and rounds back to 32-bit storage, so
    /// stored norms land within 1e-6 of 1.0.
    pub fn from_rows_normalized(rows: &[Vec<f32>]) -> Result<Self, VecError> {
        let mut normalized = Vec::with_capacity(rows.len());
        for v in rows {
            let unit = normalize(v)?;
            normalized.push(unit.into_iter().map(|x| x as f32).collect());
        }
        Self::from_rows(&normalized)
    }

    /// An empty dataset of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Dataset {
            dim,
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vectors.
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The vector at `index`. Panics if out of range.
    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// True when every vector's L2 norm is within `tol` of 1.0.
    pub fn is_unit_normalized(&self, tol: f64) -> bool {
        self.iter().all(|v| {
            let norm: f64 = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
            (norm.sqrt() - 1.0).abs() <= tol
        })
    }
}

/// Scales `v` to unit L2 norm, preserving direction.
///
/// Input components may be 32- or 64-bit; the result is computed in 64-bit
/// and has norm within 1e-9 of 1.0. A zero vector is not normalizable.
pub fn normalize<T>(v: &[T]) -> Result<Vec<f64>, VecError>
where
    T: Copy,
    f64: From<T>,
{
    let mut sq = 0.0f64;
    for (position, &x) in v.iter().enumerate() {
        let x = f64::from(x);
        if !x.is_finite() {
            return Err(VecError::NonFinite { position });
        }
        sq += x * x;
    }
    let norm = sq.sqrt();
    if norm == 0.0 {
        return Err(VecError::ZeroVector);
    }
    Ok(v.iter().map(|&x| f64::from(x) / norm).collect())
}

/// Cosine distance `1 - dot(u, v)`, clamped into [0, 2].
///
/// The clamp absorbs floating-point dot products that stray outside [-1, 1]
/// on normalized inputs, keeping the Euclidean conversion's square root
/// defined.
pub fn cosine_distance<T>(u: &[T], v: &[T]) -> Result<f64, VecError>
where
    T: Copy,
    f64: From<T>,
{
    if u.len() != v.len() {
        return Err(VecError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let dot: f64 = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    Ok((1.0 - dot).clamp(0.0, 2.0))
}

/// Euclidean distance with 64-bit accumulation.
pub fn euclidean_distance<T>(u: &[T], v: &[T]) -> Result<f64, VecError>
where
    T: Copy,
    f64: From<T>,
{
    if u.len() != v.len() {
        return Err(VecError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let sq: f64 = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// Converts a cosine distance into the equivalent Euclidean distance
/// between unit vectors: `d_euc = sqrt(2 * d_cos)`.
pub fn cos_to_euclidean(d_cos: f64) -> Result<f64, VecError> {
    if !(0.0..=2.0).contains(&d_cos) {
        return Err(VecError::CosineOutOfRange { value: d_cos });
    }
    Ok((2.0 * d_cos).sqrt())
}

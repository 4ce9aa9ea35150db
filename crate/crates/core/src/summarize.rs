//! Collapsing an embedding matrix into a single summary vector.

use crate::error::{Error, Result};
use crate::types::{DatasetProfile, EmbeddingMatrix, Role, Summarizer, SummaryVector};

/// Tolerance on the L1 mass of a vector that claims to be normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Summarizes a matrix for use with any distance kind.
///
/// Negative mean components are rejected, since the probability distances are
/// undefined on them. Use [`summarize_allow_negative`] to keep such vectors for
/// the Minkowski distances.
pub fn summarize(matrix: &EmbeddingMatrix, summarizer: Summarizer) -> Result<SummaryVector> {
    let raw_mean = aggregate(matrix, summarizer)?;
    let mass: f64 = raw_mean.iter().sum();
    if let Some((index, &value)) = raw_mean.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeComponent { index, value });
    }
    if !(mass > 0.0) {
        return Err(Error::NegativeMass(mass));
    }
    let values = raw_mean.iter().map(|v| v / mass).collect();
    Ok(SummaryVector {
        values,
        raw_mean,
        summarizer,
        normalized: true,
    })
}

/// Like [`summarize`] but divides by the L1 norm instead of failing on negative
/// components. The result is flagged as not normalized, so only EUC and
/// CITYBLOCK accept it.
pub fn summarize_allow_negative(matrix: &EmbeddingMatrix, summarizer: Summarizer) -> Result<SummaryVector> {
    match summarize(matrix, summarizer) {
        Err(Error::NegativeComponent { .. }) | Err(Error::NegativeMass(_)) => {}
        other => return other,
    }
    let raw_mean = aggregate(matrix, summarizer)?;
    let norm: f64 = raw_mean.iter().map(|v| v.abs()).sum();
    if !(norm > 0.0) {
        return Err(Error::NegativeMass(raw_mean.iter().sum()));
    }
    let values = raw_mean.iter().map(|v| v / norm).collect();
    Ok(SummaryVector {
        values,
        raw_mean,
        summarizer,
        normalized: false,
    })
}

/// Per-dimension (trimmed) arithmetic mean of the rows.
pub fn aggregate(matrix: &EmbeddingMatrix, summarizer: Summarizer) -> Result<Vec<f64>> {
    let n = matrix.items();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    match summarizer {
        Summarizer::Mean => {
            let mut acc = vec![0.0; matrix.dim()];
            for row in matrix.rows() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|a| a / n as f64).collect())
        }
        Summarizer::TrimmedMean(frac) => {
            if !(0.0..0.5).contains(&frac) {
                return Err(Error::InvalidTrimFraction(frac));
            }
            let cut = (frac * n as f64).floor() as usize;
            let kept = n - 2 * cut;
            let mut column = Vec::with_capacity(n);
            let out = (0..matrix.dim())
                .map(|j| {
                    column.clear();
                    column.extend(matrix.rows().map(|r| r[j]));
                    column.sort_by(f64::total_cmp);
                    column[cut..n - cut].iter().sum::<f64>() / kept as f64
                })
                .collect();
            Ok(out)
        }
    }
}

/// Uniform additive smoothing: every component becomes `(v + eps) / (1 + d * eps)`.
pub fn smooth(v: &SummaryVector, epsilon: f64) -> Result<SummaryVector> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    if !is_probability(&v.values) {
        return Err(Error::NotNormalized);
    }
    Ok(SummaryVector {
        values: smooth_values(&v.values, epsilon),
        raw_mean: v.raw_mean.clone(),
        summarizer: v.summarizer,
        normalized: true,
    })
}

pub(crate) fn smooth_values(values: &[f64], epsilon: f64) -> Vec<f64> {
    let denom = 1.0 + values.len() as f64 * epsilon;
    values.iter().map(|v| (v + epsilon) / denom).collect()
}

/// Divides a non-negative vector by its sum.
pub fn l1_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeComponent { index, value });
    }
    let mass: f64 = values.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::NegativeMass(mass));
    }
    Ok(values.iter().map(|v| v / mass).collect())
}

pub fn is_probability(values: &[f64]) -> bool {
    values.iter().all(|v| *v >= 0.0)
        && (values.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOLERANCE
}

/// Builds a profile from an embedding matrix. `size` defaults to the row count.
pub fn build_profile(
    name: impl Into<String>,
    matrix: &EmbeddingMatrix,
    size: Option<u64>,
    summarizer: Summarizer,
    role: Role,
) -> Result<DatasetProfile> {
    let size = size.unwrap_or(matrix.items() as u64);
    if size == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    Ok(DatasetProfile {
        name: name.into(),
        size,
        summary: summarize(matrix, summarizer)?,
        extractor_id: matrix.extractor_id().to_string(),
        role,
    })
}

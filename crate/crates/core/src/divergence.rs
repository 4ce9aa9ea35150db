//! Distances between dataset summaries. Natural logarithms throughout.

use crate::error::{Error, Result};
use crate::summarize::smooth_values;
use crate::types::{DivergenceKind, SummaryVector};

/// Distance between two summaries.
///
/// KL, JSD and CHI2 need strictly positive probability vectors: with
/// `epsilon > 0` both inputs are smoothed first, with `epsilon == 0` they are
/// used as given and any zero component is an error. EUC and CITYBLOCK use the
/// normalized values directly and ignore `epsilon`.
///
/// KL is `KL(p ‖ q)`; callers decide which summary goes first.
pub fn distance(kind: DivergenceKind, p: &SummaryVector, q: &SummaryVector, epsilon: f64) -> Result<f64> {
    distance_values(kind, &p.values, &q.values, p.normalized && q.normalized, epsilon)
}

pub(crate) fn distance_values(
    kind: DivergenceKind,
    p: &[f64],
    q: &[f64],
    normalized: bool,
    epsilon: f64,
) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if !kind.is_probabilistic() {
        return Ok(match kind {
            DivergenceKind::Euc => euclidean(p, q),
            _ => cityblock(p, q),
        });
    }
    if !normalized {
        return Err(Error::NotNormalized);
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let (ps, qs);
    let (p, q) = if epsilon > 0.0 {
        ps = smooth_values(p, epsilon);
        qs = smooth_values(q, epsilon);
        (&ps[..], &qs[..])
    } else {
        for v in [p, q] {
            if let Some(index) = v.iter().position(|x| !(*x > 0.0)) {
                return Err(Error::NonPositiveComponent { index });
            }
        }
        (p, q)
    };
    Ok(match kind {
        DivergenceKind::Kl => kl(p, q),
        DivergenceKind::Jsd => jsd(p, q),
        _ => chi2(p, q),
    })
}

/// `Σ pᵢ ln(pᵢ/qᵢ)` on strictly positive inputs, clamped at zero.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Jensen-Shannon distance: the square root of the JS divergence.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0).sqrt()
}

/// Histogram chi-square distance, `½ Σ (pᵢ−qᵢ)²/(pᵢ+qᵢ)`.
pub fn chi2(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b).powi(2) / (a + b))
        .sum::<f64>()
}

pub fn euclidean(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

pub fn cityblock(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

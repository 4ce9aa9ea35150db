//! Source scoring, the selection baselines and profile merging.
//!
//! The score of a source `s` for a target `t` is
//! `z(ln |s|) + k · z(D(t, s))`, where both z-scalings use the mean and
//! population standard deviation of the current candidate set.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::divergence::distance;
use crate::error::{Error, Result};
use crate::summarize::l1_normalize;
use crate::types::{
    DatasetProfile, DivergenceKind, EstimatorConfig, KlDirection, Role, ScoredSource, Summarizer,
    SummaryVector,
};

/// Below this ratio of standard deviation to magnitude a list is treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-12;

/// Standardizes a list with its mean and population standard deviation.
///
/// Single values and (numerically) constant lists map to all zeros.
pub fn zscale(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sigma > DEGENERATE_SPREAD * scale) {
        return vec![0.0; n];
    }
    values.iter().map(|v| (v - mean) / sigma).collect()
}

/// `D(t, s)` under the configured kind, smoothing and KL direction.
pub fn target_source_distance(
    target: &DatasetProfile,
    source: &DatasetProfile,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let (a, b) = match (cfg.distance, cfg.kl_direction) {
        (DivergenceKind::Kl, KlDirection::SourceTarget) => (&source.summary, &target.summary),
        _ => (&target.summary, &source.summary),
    };
    distance(cfg.distance, a, b, cfg.epsilon)
}

fn check_candidates(target: &DatasetProfile, sources: &[DatasetProfile], cfg: &EstimatorConfig) -> Result<()> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut seen = HashSet::new();
    for s in sources {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::DuplicateSourceName(s.name.clone()));
        }
        if s.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                left: target.dim(),
                right: s.dim(),
            });
        }
        if !cfg.allow_mixed_extractors && s.extractor_id != target.extractor_id {
            return Err(Error::MixedExtractors(
                target.extractor_id.clone(),
                s.extractor_id.clone(),
            ));
        }
    }
    Ok(())
}

/// Descending score, then descending size, then name.
fn rank_order(a: &ScoredSource, b: &ScoredSource) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.size.cmp(&a.size))
        .then_with(|| a.source_name.cmp(&b.source_name))
}

/// Scores every candidate source for `target` and returns them best first.
pub fn score_sources(
    target: &DatasetProfile,
    sources: &[DatasetProfile],
    cfg: &EstimatorConfig,
) -> Result<Vec<ScoredSource>> {
    check_candidates(target, sources, cfg)?;
    let distances = sources
        .iter()
        .map(|s| target_source_distance(target, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let log_sizes: Vec<f64> = sources.iter().map(DatasetProfile::log_size).collect();
    Ok(score_from_parts(sources, &distances, &log_sizes, cfg.k))
}

/// Scores from precomputed distances and log-sizes (same order as `sources`).
pub fn score_from_parts(
    sources: &[DatasetProfile],
    distances: &[f64],
    log_sizes: &[f64],
    k: f64,
) -> Vec<ScoredSource> {
    let z_size = zscale(log_sizes);
    let z_dist = zscale(distances);
    let mut scored: Vec<ScoredSource> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| ScoredSource {
            source_name: s.name.clone(),
            size: s.size,
            distance_value: distances[i],
            log_size: log_sizes[i],
            z_log_size: z_size[i],
            z_distance: z_dist[i],
            score: z_size[i] + k * z_dist[i],
        })
        .collect();
    scored.sort_by(rank_order);
    scored
}

/// The top-scoring source.
pub fn select(scored: &[ScoredSource]) -> Result<String> {
    scored
        .iter()
        .min_by(|a, b| rank_order(a, b))
        .map(|s| s.source_name.clone())
        .ok_or(Error::EmptyCandidates)
}

/// The five reference strategies a selection method is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Baseline {
    /// Largest source dataset.
    B1,
    /// A fixed, named reference source.
    B2,
    /// Uniformly random source.
    B3,
    /// No transfer: train from random initialization.
    B4,
    /// Least divergent source.
    B5,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [Baseline::B1, Baseline::B2, Baseline::B3, Baseline::B4, Baseline::B5];
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Baseline::B1 => "B1",
            Baseline::B2 => "B2",
            Baseline::B3 => "B3",
            Baseline::B4 => "B4",
            Baseline::B5 => "B5",
        };
        f.write_str(s)
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B1" => Ok(Baseline::B1),
            "B2" => Ok(Baseline::B2),
            "B3" => Ok(Baseline::B3),
            "B4" => Ok(Baseline::B4),
            "B5" => Ok(Baseline::B5),
            other => Err(Error::InvalidConfig(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Source names ordered by descending size, then name.
pub fn rank_by_size(sources: &[DatasetProfile]) -> Vec<String> {
    let mut order: Vec<&DatasetProfile> = sources.iter().collect();
    order.sort_by(|a, b| b.size.cmp(&a.size).then_with(|| a.name.cmp(&b.name)));
    order.into_iter().map(|s| s.name.clone()).collect()
}

/// Source names ordered by ascending distance to the target, ties by descending size, then name.
pub fn rank_by_distance(
    target: &DatasetProfile,
    sources: &[DatasetProfile],
    cfg: &EstimatorConfig,
) -> Result<Vec<String>> {
    check_candidates(target, sources, cfg)?;
    let mut scored = sources
        .iter()
        .map(|s| Ok((target_source_distance(target, s, cfg)?, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(da, a), (db, b)| {
        da.total_cmp(db)
            .then(b.size.cmp(&a.size))
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(scored.into_iter().map(|(_, s)| s.name.clone()).collect())
}

/// Pick of a baseline strategy; `None` means training from scratch.
pub fn baseline_select(
    kind: Baseline,
    target: &DatasetProfile,
    sources: &[DatasetProfile],
    cfg: &EstimatorConfig,
    reference_name: Option<&str>,
    rng_seed: Option<u64>,
) -> Result<Option<String>> {
    if kind == Baseline::B4 {
        return Ok(None);
    }
    if sources.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    match kind {
        Baseline::B1 => Ok(rank_by_size(sources).into_iter().next()),
        Baseline::B2 => {
            let name = reference_name.ok_or_else(|| Error::MissingReference(String::new()))?;
            sources
                .iter()
                .find(|s| s.name == name)
                .map(|s| Some(s.name.clone()))
                .ok_or_else(|| Error::MissingReference(name.to_string()))
        }
        Baseline::B3 => {
            let seed = rng_seed.ok_or(Error::MissingSeed)?;
            let mut names: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Some(names[rng.random_range(0..names.len())].to_string()))
        }
        Baseline::B5 => Ok(rank_by_distance(target, sources, cfg)?.into_iter().next()),
        Baseline::B4 => unreachable!(),
    }
}

/// Pools several mean-summarized profiles into one, as if their datasets had
/// been concatenated.
pub fn merge_profiles(profiles: &[DatasetProfile], name: impl Into<String>) -> Result<DatasetProfile> {
    if profiles.len() < 2 {
        return Err(Error::TooFewProfiles {
            needed: 2,
            got: profiles.len(),
        });
    }
    let first = &profiles[0];
    let dim = first.dim();
    for p in profiles {
        if p.summary.summarizer != Summarizer::Mean {
            return Err(Error::MixedSummarizers);
        }
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: p.dim(),
            });
        }
        if p.extractor_id != first.extractor_id {
            return Err(Error::MixedExtractors(first.extractor_id.clone(), p.extractor_id.clone()));
        }
    }
    let size: u64 = profiles.iter().map(|p| p.size).sum();
    let mut raw_mean = vec![0.0; dim];
    for p in profiles {
        for (acc, v) in raw_mean.iter_mut().zip(&p.summary.raw_mean) {
            *acc += p.size as f64 * v;
        }
    }
    for v in raw_mean.iter_mut() {
        *v /= size as f64;
    }
    let (values, normalized) = match l1_normalize(&raw_mean) {
        Ok(values) => (values, true),
        Err(_) => {
            let norm: f64 = raw_mean.iter().map(|v| v.abs()).sum();
            if !(norm > 0.0) {
                return Err(Error::NegativeMass(raw_mean.iter().sum()));
            }
            (raw_mean.iter().map(|v| v / norm).collect(), false)
        }
    };
    Ok(DatasetProfile {
        name: name.into(),
        size,
        summary: SummaryVector {
            values,
            raw_mean,
            summarizer: Summarizer::Mean,
            normalized,
        },
        extractor_id: first.extractor_id.clone(),
        role: Role::Source,
    })
}

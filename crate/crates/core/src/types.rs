//! Domain types shared across the pipeline.
//!
//! All types are plain immutable data once constructed and are `Send + Sync`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-item feature vectors for one dataset, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    items: usize,
    dim: usize,
    values: Vec<f64>,
    extractor_id: String,
}

impl EmbeddingMatrix {
    pub fn new(items: usize, dim: usize, values: Vec<f64>, extractor_id: impl Into<String>) -> Result<Self> {
        if items == 0 {
            return Err(Error::EmptyMatrix);
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
        }
        if values.len() != items * dim {
            return Err(Error::ShapeMismatch {
                expected: items * dim,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            items,
            dim,
            values,
            extractor_id: extractor_id.into(),
        })
    }

    /// Builds a matrix from explicit rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>], extractor_id: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyMatrix)?;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, values, extractor_id)
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Row-concatenation of two matrices from the same extractor.
    pub fn concat(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        if self.extractor_id != other.extractor_id {
            return Err(Error::MixedExtractors(
                self.extractor_id.clone(),
                other.extractor_id.clone(),
            ));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(self.items + other.items, self.dim, values, self.extractor_id.clone())
    }
}

/// How a dataset's rows are collapsed into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Summarizer {
    #[default]
    Mean,
    /// Per-dimension trimmed mean; the fraction is trimmed from each end.
    TrimmedMean(f64),
}

impl fmt::Display for Summarizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Summarizer::Mean => write!(f, "mean"),
            Summarizer::TrimmedMean(frac) => write!(f, "trimmed:{frac}"),
        }
    }
}

impl FromStr for Summarizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mean") {
            return Ok(Summarizer::Mean);
        }
        let frac = s
            .strip_prefix("trimmed:")
            .or_else(|| s.strip_prefix("trimmed_mean:"))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown summarizer `{s}`")))?;
        let frac: f64 = frac
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad trim fraction `{frac}`")))?;
        if !(0.0..0.5).contains(&frac) {
            return Err(Error::InvalidTrimFraction(frac));
        }
        Ok(Summarizer::TrimmedMean(frac))
    }
}

impl TryFrom<String> for Summarizer {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Summarizer> for String {
    fn from(s: Summarizer) -> String {
        s.to_string()
    }
}

/// Dataset summary: the (trimmed) mean of the rows and its L1 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector {
    pub values: Vec<f64>,
    pub raw_mean: Vec<f64>,
    pub summarizer: Summarizer,
    /// True when `values` is a probability vector (non-negative, sums to one).
    pub normalized: bool,
}

impl SummaryVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Source,
    Target,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Source => write!(f, "source"),
            Role::Target => write!(f, "target"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "source" => Ok(Role::Source),
            "target" => Ok(Role::Target),
            other => Err(Error::InvalidConfig(format!("unknown role `{other}`"))),
        }
    }
}

/// The persisted unit of the source registry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetProfile {
    pub name: String,
    /// Number of items (not labels) in the dataset.
    pub size: u64,
    pub summary: SummaryVector,
    pub extractor_id: String,
    pub role: Role,
}

impl DatasetProfile {
    pub fn dim(&self) -> usize {
        self.summary.dim()
    }

    /// Natural log of the dataset size.
    pub fn log_size(&self) -> f64 {
        (self.size as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "JSD")]
    Jsd,
    #[serde(rename = "CHI2")]
    Chi2,
    #[serde(rename = "EUC")]
    Euc,
    #[serde(rename = "CITYBLOCK")]
    Cityblock,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 5] = [
        DivergenceKind::Kl,
        DivergenceKind::Jsd,
        DivergenceKind::Chi2,
        DivergenceKind::Euc,
        DivergenceKind::Cityblock,
    ];

    /// Kinds that treat the summaries as probability distributions and need smoothing.
    pub fn is_probabilistic(self) -> bool {
        matches!(self, DivergenceKind::Kl | DivergenceKind::Jsd | DivergenceKind::Chi2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::Kl => "KL",
            DivergenceKind::Jsd => "JSD",
            DivergenceKind::Chi2 => "CHI2",
            DivergenceKind::Euc => "EUC",
            DivergenceKind::Cityblock => "CITYBLOCK",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "KL" | "KLD" => Ok(DivergenceKind::Kl),
            "JSD" | "JS" => Ok(DivergenceKind::Jsd),
            "CHI2" => Ok(DivergenceKind::Chi2),
            "EUC" | "EUCLIDEAN" | "ED" => Ok(DivergenceKind::Euc),
            "CITYBLOCK" | "L1" | "MANHATTAN" => Ok(DivergenceKind::Cityblock),
            other => Err(Error::InvalidConfig(format!("unknown distance `{other}`"))),
        }
    }
}

/// Argument order for the (asymmetric) KL divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KlDirection {
    /// KL(target ‖ source)
    #[default]
    TargetSource,
    /// KL(source ‖ target)
    SourceTarget,
}

/// Everything needed to compute the selection score for a target.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub distance: DivergenceKind,
    /// Weight of the distance term, conventionally negative.
    pub k: f64,
    pub epsilon: f64,
    pub summarizer: Summarizer,
    pub kl_direction: KlDirection,
    pub allow_mixed_extractors: bool,
}

pub const DEFAULT_EPSILON: f64 = 1e-6;

impl EstimatorConfig {
    pub fn new(distance: DivergenceKind, k: f64) -> Self {
        Self {
            distance,
            k,
            epsilon: DEFAULT_EPSILON,
            summarizer: Summarizer::Mean,
            kl_direction: KlDirection::TargetSource,
            allow_mixed_extractors: false,
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        Self { k, ..self.clone() }
    }

    pub fn with_distance(&self, distance: DivergenceKind) -> Self {
        Self {
            distance,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::NonPositiveEpsilon(self.epsilon));
        }
        if !self.k.is_finite() {
            return Err(Error::InvalidConfig(format!("k must be finite, got {}", self.k)));
        }
        Ok(())
    }
}

/// One candidate source with every intermediate of its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSource {
    pub source_name: String,
    pub size: u64,
    pub distance_value: f64,
    pub log_size: f64,
    pub z_log_size: f64,
    pub z_distance: f64,
    pub score: f64,
}

impl ScoredSource {
    /// Recomputes the score from the stored z-components.
    pub fn rederive(&self, k: f64) -> f64 {
        self.z_log_size + k * self.z_distance
    }
}

/// Measured transfer outcome for a (target, source) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRecord {
    pub target_name: String,
    pub source_name: String,
    pub perf_transfer: f64,
    pub perf_scratch: f64,
    pub improvement: f64,
}

impl ImprovementRecord {
    pub fn new(
        target_name: impl Into<String>,
        source_name: impl Into<String>,
        perf_transfer: f64,
        perf_scratch: f64,
    ) -> Self {
        Self {
            target_name: target_name.into(),
            source_name: source_name.into(),
            perf_transfer,
            perf_scratch,
            improvement: perf_transfer - perf_scratch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: f64,
    pub distance: DivergenceKind,
    pub mean_rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub best_k: f64,
    pub best_distance: DivergenceKind,
    pub best_mean_rho: f64,
    pub grid: Vec<GridPoint>,
    /// Spearman rho per task at the best grid point.
    pub per_task_rho: BTreeMap<String, f64>,
    pub top_t: usize,
    /// Fraction of tasks whose true best source lands in the predicted top T at the best grid point.
    pub top_t_hit_rate: f64,
}

impl CalibrationReport {
    /// The rho(k) curve for one distance kind, ordered as in the grid.
    pub fn curve(&self, distance: DivergenceKind) -> Vec<(f64, f64)> {
        self.grid
            .iter()
            .filter(|g| g.distance == distance)
            .map(|g| (g.k, g.mean_rho))
            .collect()
    }

    pub fn rho_at(&self, distance: DivergenceKind, k: f64) -> Option<f64> {
        self.grid
            .iter()
            .find(|g| g.distance == distance && (g.k - k).abs() < 1e-9)
            .map(|g| g.mean_rho)
    }
}

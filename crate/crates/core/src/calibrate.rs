//! Rank statistics, calibration of `k` and the distance kind, and the
//! evaluation metrics used to compare selection methods.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{target_source_distance, zscale};
use crate::types::{
    CalibrationReport, DatasetProfile, DivergenceKind, EstimatorConfig, GridPoint, ImprovementRecord,
};

/// Two grid points whose mean rho differ by less than this are tied.
const RHO_TIE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub top_t: usize,
    pub k_grid: Vec<f64>,
    pub distance_kinds: Vec<DivergenceKind>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            top_t: 1,
            k_grid: default_k_grid(),
            distance_kinds: DivergenceKind::ALL.to_vec(),
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_t == 0 {
            return Err(Error::InvalidConfig("top_T must be at least 1".into()));
        }
        if self.k_grid.is_empty() || self.distance_kinds.is_empty() {
            return Err(Error::InvalidConfig("calibration grid is empty".into()));
        }
        if self.k_grid.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidConfig("k grid contains a non-finite value".into()));
        }
        Ok(())
    }
}

/// k from −3.00 to 0.00 in steps of 0.05.
pub fn default_k_grid() -> Vec<f64> {
    k_grid(-3.0, 0.0, 0.05)
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn k_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round().max(1.0) as i64;
    (0..=n)
        .map(|i| (lo * (n - i) as f64 + hi * i as f64) / n as f64)
        .collect()
}

/// Average (fractional) ranks, 1-based. Ties share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateConstantInput);
    }
    pearson(&average_ranks(a), &average_ranks(b)).ok_or(Error::DegenerateConstantInput)
}

/// A target with measured improvements for (some of) the candidate sources.
#[derive(Debug, Clone)]
pub struct TrainingTask {
    pub target: DatasetProfile,
    pub ground_truth: Vec<ImprovementRecord>,
}

struct PreparedTask {
    name: String,
    sources: Vec<String>,
    improvements: Vec<f64>,
    z_size: Vec<f64>,
    distances: HashMap<DivergenceKind, Vec<f64>>,
}

impl PreparedTask {
    fn scores(&self, kind: DivergenceKind, k: f64) -> Vec<f64> {
        let z_dist = zscale(&self.distances[&kind]);
        self.z_size.iter().zip(&z_dist).map(|(s, d)| s + k * d).collect()
    }

    fn rho(&self, kind: DivergenceKind, k: f64) -> f64 {
        // A constant score list carries no ranking information.
        spearman_rho(&self.scores(kind, k), &self.improvements).unwrap_or(0.0)
    }

    fn top_t_hit(&self, kind: DivergenceKind, k: f64, t: usize) -> bool {
        let scores = self.scores(kind, k);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| self.sources[a].cmp(&self.sources[b])));
        let best = self.improvements.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        order.iter().take(t).any(|&i| self.improvements[i] == best)
    }
}

fn prepare(
    task: &TrainingTask,
    sources: &[DatasetProfile],
    kinds: &[DivergenceKind],
    base: &EstimatorConfig,
) -> Result<PreparedTask> {
    let by_name: HashMap<&str, &DatasetProfile> = sources.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut records: Vec<&ImprovementRecord> = task.ground_truth.iter().collect();
    records.sort_by(|a, b| a.source_name.cmp(&b.source_name));
    records.dedup_by(|a, b| a.source_name == b.source_name);
    let members = records
        .iter()
        .map(|r| {
            by_name
                .get(r.source_name.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownSource(r.source_name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    if members.len() < 3 {
        return Err(Error::TooFewSources {
            task: task.target.name.clone(),
            count: members.len(),
        });
    }
    let log_sizes: Vec<f64> = members.iter().map(|s| s.log_size()).collect();
    let mut distances = HashMap::new();
    for &kind in kinds {
        let cfg = base.with_distance(kind);
        let d = members
            .iter()
            .map(|s| target_source_distance(&task.target, s, &cfg))
            .collect::<Result<Vec<_>>>()?;
        distances.insert(kind, d);
    }
    Ok(PreparedTask {
        name: task.target.name.clone(),
        sources: members.iter().map(|s| s.name.clone()).collect(),
        improvements: records.iter().map(|r| r.improvement).collect(),
        z_size: zscale(&log_sizes),
        distances,
    })
}

/// Grid search over `k` and the distance kind maximizing the mean Spearman rho
/// between scores and measured improvements.
///
/// Ties go to the smaller `|k|`, then to the earlier distance kind
/// (KL, JSD, CHI2, EUC, CITYBLOCK). A task whose scores are constant at some
/// grid point contributes rho = 0 there.
pub fn tune_k(
    training_tasks: &[TrainingTask],
    sources: &[DatasetProfile],
    cfg: &EvaluationConfig,
    base: &EstimatorConfig,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    base.validate()?;
    if training_tasks.is_empty() {
        return Err(Error::InvalidConfig("no training tasks".into()));
    }
    let mut kinds = cfg.distance_kinds.clone();
    kinds.sort();
    kinds.dedup();
    let mut tasks = training_tasks
        .iter()
        .map(|t| prepare(t, sources, &kinds, base))
        .collect::<Result<Vec<_>>>()?;
    // Reduction order fixed by name so the result does not depend on input order.
    tasks.sort_by(|a, b| a.name.cmp(&b.name));

    let points: Vec<(DivergenceKind, f64)> = kinds
        .iter()
        .flat_map(|&d| cfg.k_grid.iter().map(move |&k| (d, k)))
        .collect();
    let grid: Vec<GridPoint> = points
        .par_iter()
        .map(|&(distance, k)| {
            let sum: f64 = tasks.iter().map(|t| t.rho(distance, k)).sum();
            GridPoint {
                k,
                distance,
                mean_rho: sum / tasks.len() as f64,
            }
        })
        .collect();

    let best = grid
        .iter()
        .reduce(|best, g| {
            let better = if (g.mean_rho - best.mean_rho).abs() > RHO_TIE {
                g.mean_rho > best.mean_rho
            } else if g.k.abs() != best.k.abs() {
                g.k.abs() < best.k.abs()
            } else {
                g.distance < best.distance
            };
            if better {
                g
            } else {
                best
            }
        })
        .expect("grid is non-empty")
        .clone();

    let per_task_rho = tasks
        .iter()
        .map(|t| (t.name.clone(), t.rho(best.distance, best.k)))
        .collect();
    let hits = tasks
        .iter()
        .filter(|t| t.top_t_hit(best.distance, best.k, cfg.top_t))
        .count();
    Ok(CalibrationReport {
        best_k: best.k,
        best_distance: best.distance,
        best_mean_rho: best.mean_rho,
        grid,
        per_task_rho,
        top_t: cfg.top_t,
        top_t_hit_rate: hits as f64 / tasks.len() as f64,
    })
}

/// 1-based position of `best_true` in `ranking`.
pub fn picks_to_best(ranking: &[String], best_true: &str) -> Result<usize> {
    ranking
        .iter()
        .position(|r| r == best_true)
        .map(|p| p + 1)
        .ok_or_else(|| Error::NotInRanking(best_true.to_string()))
}

/// Attempts needed until a source with the maximal improvement is tried.
/// Sources tied for the maximum all count as best.
pub fn attempts_to_best(ranking: &[String], improvements: &HashMap<String, f64>) -> Result<usize> {
    let best = ranking
        .iter()
        .map(|r| improvements.get(r).copied().ok_or_else(|| Error::UnknownSource(r.clone())))
        .collect::<Result<Vec<_>>>()?;
    let max = best.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    best.iter()
        .position(|v| *v == max)
        .map(|p| p + 1)
        .ok_or(Error::EmptyCandidates)
}

/// Whether the true best source is among the first `t` of `ranking`.
pub fn top_t_hit(ranking: &[String], improvements: &HashMap<String, f64>, t: usize) -> Result<bool> {
    Ok(attempts_to_best(ranking, improvements)? <= t)
}

/// One row of a relative-gain table.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub method: String,
    pub pick: Option<String>,
    pub perf: f64,
    /// `(perf(P2L) − perf(method)) / perf(method)`
    pub gain: f64,
}

pub const P2L_METHOD: &str = "P2L";

/// Relative gain of the P2L pick over every other method's pick for one target.
/// A `None` pick means training from scratch and uses `perf_scratch`.
pub fn gain_table(
    records: &[ImprovementRecord],
    selections: &BTreeMap<String, Option<String>>,
) -> Result<Vec<GainRow>> {
    let perf_of = |method: &str, pick: &Option<String>| -> Result<f64> {
        match pick {
            Some(src) => records
                .iter()
                .find(|r| &r.source_name == src)
                .map(|r| r.perf_transfer)
                .ok_or_else(|| Error::MissingRecord {
                    method: method.to_string(),
                    source_name: src.clone(),
                }),
            None => records
                .first()
                .map(|r| r.perf_scratch)
                .ok_or_else(|| Error::MissingRecord {
                    method: method.to_string(),
                    source_name: "<scratch>".into(),
                }),
        }
    };
    let p2l_pick = selections
        .get(P2L_METHOD)
        .ok_or_else(|| Error::InvalidConfig("selections must include P2L".into()))?;
    let p2l = perf_of(P2L_METHOD, p2l_pick)?;
    selections
        .iter()
        .filter(|(m, _)| m.as_str() != P2L_METHOD)
        .map(|(method, pick)| {
            let perf = perf_of(method, pick)?;
            if perf == 0.0 {
                return Err(Error::ZeroDenominator(method.clone()));
            }
            Ok(GainRow {
                method: method.clone(),
                pick: pick.clone(),
                perf,
                gain: (p2l - perf) / perf,
            })
        })
        .collect()
}

//! End-to-end studies on an oracle world: measured improvements for every
//! (target, source) pair, calibration, selection by every method, and the
//! merged-source comparison.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;

use super::world::{DomainRole, Samples};
use super::{fine_tune, pretrain, pretrain_on, source_profile, stream, target_profile, Network, OracleConfig, OracleWorld};
use crate::calibrate::{attempts_to_best, gain_table, spearman_rho, tune_k, EvaluationConfig, GainRow, TrainingTask};
use crate::error::{Error, Result};
use crate::estimator::{
    baseline_select, merge_profiles, rank_by_distance, rank_by_size, score_sources, target_source_distance, Baseline,
};
use crate::types::{CalibrationReport, DatasetProfile, EstimatorConfig, ImprovementRecord};

/// Selection methods in report order.
pub const METHODS: [&str; 6] = ["P2L", "B1", "B2", "B3", "B4", "B5"];

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    /// `eval` or `calibration`
    pub split: &'static str,
    pub size: u64,
    pub distance: f64,
    pub record: ImprovementRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutcome {
    pub target: String,
    /// Pick per method; `None` is training from scratch.
    pub picks: BTreeMap<String, Option<String>>,
    /// Sources attaining the maximal measured improvement.
    pub best_sources: Vec<String>,
    /// Source ranking by score (best first).
    pub ranking: Vec<String>,
    pub rho_p2l: f64,
    pub rho_size: f64,
    pub rho_distance: f64,
    /// Attempts to reach a best source for the methods that induce a full ranking.
    pub attempts: BTreeMap<String, usize>,
    pub gains: Vec<GainRow>,
}

impl TargetOutcome {
    pub fn hit(&self, method: &str) -> bool {
        matches!(self.picks.get(method), Some(Some(s)) if self.best_sources.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_accuracy: f64,
    pub top1_hits: usize,
    pub top1_rate: f64,
    pub mean_attempts: Option<f64>,
    pub mean_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub seed: u64,
    /// Configuration used for the P2L picks (calibrated when the world has calibration targets).
    pub estimator: EstimatorConfig,
    pub calibration: Option<CalibrationReport>,
    pub reference_source: String,
    pub pairs: Vec<PairRecord>,
    pub targets: Vec<TargetOutcome>,
    pub methods: Vec<MethodSummary>,
}

impl StudyReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn mean_rho_p2l(&self) -> f64 {
        mean(self.targets.iter().map(|t| t.rho_p2l))
    }

    pub fn mean_rho_size(&self) -> f64 {
        mean(self.targets.iter().map(|t| t.rho_size))
    }

    pub fn pairs_csv(&self) -> String {
        let mut s = String::from("split,target,source,size,distance,perf_transfer,perf_scratch,improvement\n");
        for p in &self.pairs {
            let r = &p.record;
            let _ = writeln!(
                s,
                "{},{},{},{},{:.9},{:.6},{:.6},{:.6}",
                p.split, r.target_name, r.source_name, p.size, p.distance, r.perf_transfer, r.perf_scratch, r.improvement
            );
        }
        s
    }

    pub fn calibration_csv(&self) -> Option<String> {
        self.calibration.as_ref().map(|c| {
            let mut s = String::from("k,distance,mean_rho\n");
            for g in &c.grid {
                let _ = writeln!(s, "{:.2},{},{:.6}", g.k, g.distance, g.mean_rho);
            }
            s
        })
    }

    pub fn targets_csv(&self) -> String {
        let mut s = String::from(
            "target,best,P2L,B1,B2,B3,B5,rho_p2l,rho_size,rho_distance,attempts_p2l,attempts_b1,attempts_b5\n",
        );
        for t in &self.targets {
            let pick = |m: &str| t.picks.get(m).cloned().flatten().unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{}",
                t.target,
                t.best_sources.join("|"),
                pick("P2L"),
                pick("B1"),
                pick("B2"),
                pick("B3"),
                pick("B5"),
                t.rho_p2l,
                t.rho_size,
                t.rho_distance,
                t.attempts["P2L"],
                t.attempts["B1"],
                t.attempts["B5"],
            );
        }
        s
    }

    /// Relative gains in the column order `(P2L-B1)/B1, (P2L-B5)/B5, (P2L-B2)/B2, (P2L-B3)/B3, (P2L-B4)/B4`.
    pub fn gains_csv(&self) -> String {
        let order = ["B1", "B5", "B2", "B3", "B4"];
        let mut s = String::from("target,p2l_pick,picked_best,gain_B1,gain_B5,gain_B2,gain_B3,gain_B4\n");
        for t in &self.targets {
            let g = |m: &str| t.gains.iter().find(|r| r.method == m).map(|r| r.gain).unwrap_or(f64::NAN);
            let pick = t.picks["P2L"].clone().unwrap_or_default();
            let _ = write!(s, "{},{},{}", t.target, pick, if t.hit("P2L") { "yes" } else { "no" });
            for m in order {
                let _ = write!(s, ",{:.2}", g(m));
            }
            s.push('\n');
        }
        s
    }

    pub fn methods_csv(&self) -> String {
        let mut s = String::from("method,mean_accuracy,top1_hits,top1_rate,mean_attempts,mean_rho\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{},{:.6},{},{:.6},{},{}",
                m.method,
                m.mean_accuracy,
                m.top1_hits,
                m.top1_rate,
                opt(m.mean_attempts),
                opt(m.mean_rho)
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "targets: {}", self.targets.len());
        let _ = writeln!(s, "distance: {}", self.estimator.distance);
        let _ = writeln!(s, "k: {:.2}", self.estimator.k);
        if let Some(c) = &self.calibration {
            let _ = writeln!(s, "calibration mean rho: {:.4}", c.best_mean_rho);
        }
        let _ = writeln!(s, "reference source (B2): {}", self.reference_source);
        let _ = writeln!(s, "mean rho P2L: {:.4}", self.mean_rho_p2l());
        let _ = writeln!(s, "mean rho size-only: {:.4}", self.mean_rho_size());
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<4} accuracy {:.4}  best picked {}/{}",
                m.method,
                m.mean_accuracy,
                m.top1_hits,
                self.targets.len()
            );
        }
        s
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("pairs.csv"), self.pairs_csv())?;
        if let Some(c) = self.calibration_csv() {
            fs::write(dir.join("calibration.csv"), c)?;
        }
        fs::write(dir.join("targets.csv"), self.targets_csv())?;
        fs::write(dir.join("gains.csv"), self.gains_csv())?;
        fs::write(dir.join("methods.csv"), self.methods_csv())?;
        fs::write(dir.join("summary.txt"), self.summary_text())?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn pretrain_all(world: &OracleWorld, names: &[String], cfg: &OracleConfig) -> Result<Vec<Network>> {
    names.par_iter().map(|n| pretrain(world, n, cfg)).collect()
}

/// Measured improvements of every source on one target; scratch accuracy shared.
fn measure_target(
    world: &OracleWorld,
    target: &str,
    sources: &[String],
    nets: &[Network],
    cfg: &OracleConfig,
) -> Result<Vec<ImprovementRecord>> {
    let scratch = fine_tune(world, None, target, cfg)?;
    sources
        .par_iter()
        .zip(nets.par_iter())
        .map(|(s, net)| {
            let perf = fine_tune(world, Some((s, net)), target, cfg)?;
            Ok(ImprovementRecord::new(target, s.clone(), perf, scratch))
        })
        .collect()
}

/// Runs the full selection study on `world`.
///
/// If the world has calibration targets, `k` and the distance kind are tuned
/// on them over `eval_cfg`'s grid; otherwise `estimator_cfg` is used as is.
pub fn run_study(
    world: &OracleWorld,
    cfg: &OracleConfig,
    estimator_cfg: &EstimatorConfig,
    eval_cfg: &EvaluationConfig,
) -> Result<StudyReport> {
    cfg.validate()?;
    estimator_cfg.validate()?;
    eval_cfg.validate()?;
    let source_names: Vec<String> = world.sources().iter().map(|d| d.name().to_string()).collect();
    let eval_names: Vec<String> = world.targets().iter().map(|d| d.name().to_string()).collect();
    let cal_names: Vec<String> = world
        .calibration_targets()
        .iter()
        .map(|d| d.name().to_string())
        .collect();
    if source_names.len() < 3 || eval_names.len() < 2 {
        return Err(Error::BadSpec(format!(
            "a study needs ≥ 3 sources and ≥ 2 targets, got {} and {}",
            source_names.len(),
            eval_names.len()
        )));
    }
    let reference = match &world.reference_source {
        Some(r) => r.clone(),
        None => source_names[0].clone(),
    };

    let source_profiles = source_names
        .iter()
        .map(|n| source_profile(world, n))
        .collect::<Result<Vec<_>>>()?;
    let nets = pretrain_all(world, &source_names, cfg)?;

    let all_targets: Vec<(&'static str, &String)> = cal_names
        .iter()
        .map(|n| ("calibration", n))
        .chain(eval_names.iter().map(|n| ("eval", n)))
        .collect();
    let measured: Vec<Vec<ImprovementRecord>> = all_targets
        .iter()
        .map(|(_, t)| measure_target(world, t, &source_names, &nets, cfg))
        .collect::<Result<_>>()?;
    let target_profiles: HashMap<&str, DatasetProfile> = all_targets
        .iter()
        .map(|(_, t)| Ok((t.as_str(), target_profile(world, t, cfg)?)))
        .collect::<Result<_>>()?;

    let calibration = if cal_names.is_empty() {
        None
    } else {
        let tasks: Vec<TrainingTask> = all_targets
            .iter()
            .zip(&measured)
            .filter(|((split, _), _)| *split == "calibration")
            .map(|((_, t), recs)| TrainingTask {
                target: target_profiles[t.as_str()].clone(),
                ground_truth: recs.clone(),
            })
            .collect();
        Some(tune_k(&tasks, &source_profiles, eval_cfg, estimator_cfg)?)
    };
    let chosen = match &calibration {
        Some(c) => estimator_cfg.with_distance(c.best_distance).with_k(c.best_k),
        None => estimator_cfg.clone(),
    };

    let sizes: HashMap<&str, u64> = source_profiles.iter().map(|p| (p.name.as_str(), p.size)).collect();
    let mut pairs = Vec::new();
    for ((split, t), recs) in all_targets.iter().zip(&measured) {
        let tp = &target_profiles[t.as_str()];
        for (r, sp) in recs.iter().zip(&source_profiles) {
            pairs.push(PairRecord {
                split,
                size: sizes[r.source_name.as_str()],
                distance: target_source_distance(tp, sp, &chosen)?,
                record: r.clone(),
            });
        }
    }

    let mut targets = Vec::new();
    for ((split, t), recs) in all_targets.iter().zip(&measured) {
        if *split != "eval" {
            continue;
        }
        targets.push(evaluate_target(
            world,
            &target_profiles[t.as_str()],
            &source_profiles,
            recs,
            &chosen,
            &reference,
        )?);
    }
    let methods = summarize_methods(&targets, &measured[cal_names.len()..]);
    Ok(StudyReport {
        seed: world.seed,
        estimator: chosen,
        calibration,
        reference_source: reference,
        pairs,
        targets,
        methods,
    })
}

fn evaluate_target(
    world: &OracleWorld,
    target: &DatasetProfile,
    sources: &[DatasetProfile],
    records: &[ImprovementRecord],
    cfg: &EstimatorConfig,
    reference: &str,
) -> Result<TargetOutcome> {
    let improvements: HashMap<String, f64> = records.iter().map(|r| (r.source_name.clone(), r.improvement)).collect();
    let scored = score_sources(target, sources, cfg)?;
    let ranking: Vec<String> = scored.iter().map(|s| s.source_name.clone()).collect();
    let by_size = rank_by_size(sources);
    let by_distance = rank_by_distance(target, sources, cfg)?;

    let b3_seed = stream(world.seed, &["b3", &target.name]).next_u64();
    let mut picks = BTreeMap::new();
    picks.insert("P2L".to_string(), ranking.first().cloned());
    for b in Baseline::ALL {
        let pick = baseline_select(b, target, sources, cfg, Some(reference), Some(b3_seed))?;
        picks.insert(b.to_string(), pick);
    }

    let best = improvements.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best_sources: Vec<String> = improvements
        .iter()
        .filter(|(_, v)| **v == best)
        .map(|(k, _)| k.clone())
        .collect();
    best_sources.sort();

    let truth: Vec<f64> = sources.iter().map(|s| improvements[&s.name]).collect();
    let score_of: HashMap<&str, f64> = scored.iter().map(|s| (s.source_name.as_str(), s.score)).collect();
    let p2l_scores: Vec<f64> = sources.iter().map(|s| score_of[s.name.as_str()]).collect();
    let log_sizes: Vec<f64> = sources.iter().map(|s| s.log_size()).collect();
    let neg_dist = sources
        .iter()
        .map(|s| target_source_distance(target, s, cfg).map(|d| -d))
        .collect::<Result<Vec<_>>>()?;
    let rho = |a: &[f64]| spearman_rho(a, &truth).unwrap_or(0.0);

    let mut attempts = BTreeMap::new();
    attempts.insert("P2L".to_string(), attempts_to_best(&ranking, &improvements)?);
    attempts.insert("B1".to_string(), attempts_to_best(&by_size, &improvements)?);
    attempts.insert("B5".to_string(), attempts_to_best(&by_distance, &improvements)?);

    Ok(TargetOutcome {
        target: target.name.clone(),
        gains: gain_table(records, &picks)?,
        picks,
        best_sources,
        ranking,
        rho_p2l: rho(&p2l_scores),
        rho_size: rho(&log_sizes),
        rho_distance: rho(&neg_dist),
        attempts,
    })
}

fn summarize_methods(targets: &[TargetOutcome], measured: &[Vec<ImprovementRecord>]) -> Vec<MethodSummary> {
    METHODS
        .iter()
        .map(|&m| {
            let accuracy = mean(targets.iter().zip(measured).map(|(t, recs)| match &t.picks[m] {
                Some(s) => recs.iter().find(|r| &r.source_name == s).map(|r| r.perf_transfer).unwrap_or(0.0),
                None => recs.first().map(|r| r.perf_scratch).unwrap_or(0.0),
            }));
            let hits = targets.iter().filter(|t| t.hit(m)).count();
            let mean_attempts = targets
                .first()
                .filter(|t| t.attempts.contains_key(m))
                .map(|_| mean(targets.iter().map(|t| t.attempts[m] as f64)));
            let mean_rho = match m {
                "P2L" => Some(mean(targets.iter().map(|t| t.rho_p2l))),
                "B1" => Some(mean(targets.iter().map(|t| t.rho_size))),
                "B5" => Some(mean(targets.iter().map(|t| t.rho_distance))),
                _ => None,
            };
            MethodSummary {
                method: m.to_string(),
                mean_accuracy: accuracy,
                top1_hits: hits,
                top1_rate: hits as f64 / targets.len().max(1) as f64,
                mean_attempts,
                mean_rho,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedRow {
    pub target: String,
    /// `reference` for the reference domain itself, `pool` for other pooled
    /// source domains, `outside` for domains not in the pool.
    pub relation: &'static str,
    /// Primary region differs from the reference's.
    pub far: bool,
    pub divergence: f64,
    pub perf_reference: f64,
    pub perf_merged: f64,
}

impl MergedRow {
    pub fn merged_wins(&self) -> bool {
        self.perf_merged > self.perf_reference
    }

    pub fn reference_wins(&self) -> bool {
        self.perf_reference > self.perf_merged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedStudyReport {
    pub seed: u64,
    pub reference: String,
    pub merged_profile: DatasetProfile,
    /// Largest component difference between the merged profile and the
    /// profile computed directly from the pooled data.
    pub merge_discrepancy: f64,
    /// Rows ordered by divergence from the reference.
    pub rows: Vec<MergedRow>,
}

impl MergedStudyReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("target,relation,far,divergence,perf_reference,perf_merged,winner\n");
        for r in &self.rows {
            let winner = if r.merged_wins() {
                "merged"
            } else if r.reference_wins() {
                "reference"
            } else {
                "tie"
            };
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:.6},{:.6},{}",
                r.target, r.relation, r.far, r.divergence, r.perf_reference, r.perf_merged, winner
            );
        }
        s
    }
}

/// Pools every source domain into one merged source and compares it with the
/// reference source on every domain's target set.
pub fn merged_source_study(
    world: &OracleWorld,
    cfg: &OracleConfig,
    estimator_cfg: &EstimatorConfig,
) -> Result<MergedStudyReport> {
    cfg.validate()?;
    estimator_cfg.validate()?;
    let reference = world
        .reference_source
        .clone()
        .ok_or_else(|| Error::BadSpec("world has no designated reference source".into()))?;
    let sources = world.sources();
    if sources.len() < 3 {
        return Err(Error::BadSpec("merged study needs the reference and at least two other sources".into()));
    }

    // Pool with one label per distinct concept.
    let mut label_of = BTreeMap::new();
    for d in &sources {
        for c in &d.spec.concepts {
            let next = label_of.len();
            label_of.entry(*c).or_insert(next);
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for d in &sources {
        features.extend_from_slice(&d.source_train.features);
        labels.extend(d.source_train.labels.iter().map(|&y| label_of[&d.spec.concepts[y]]));
    }
    let pool = Samples::new(world.feature_dim, features, labels, label_of.len());

    let member_profiles = sources
        .iter()
        .map(|d| source_profile(world, d.name()))
        .collect::<Result<Vec<_>>>()?;
    let merged_profile = merge_profiles(&member_profiles, "merged")?;
    let pooled = crate::summarize::summarize(&world.extractor.embed(&pool)?, crate::types::Summarizer::Mean)?;
    let merge_discrepancy = merged_profile
        .summary
        .values
        .iter()
        .zip(&pooled.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let (reference_net, merged_net) = rayon::join(
        || pretrain(world, &reference, cfg),
        || pretrain_on(world, "\u{222a}merged", &pool, cfg),
    );
    let (reference_net, merged_net) = (reference_net?, merged_net?);
    let reference_profile = source_profile(world, &reference)?;
    let reference_region = world.domain(&reference)?.primary_region();

    let mut rows = world
        .domains
        .par_iter()
        .map(|d| {
            let name = d.name();
            let tp = target_profile(world, name, cfg)?;
            let relation = if name == reference {
                "reference"
            } else if d.spec.role == DomainRole::Source {
                "pool"
            } else {
                "outside"
            };
            Ok(MergedRow {
                target: name.to_string(),
                relation,
                far: d.primary_region() != reference_region,
                divergence: target_source_distance(&tp, &reference_profile, estimator_cfg)?,
                perf_reference: fine_tune(world, Some((&reference, &reference_net)), name, cfg)?,
                perf_merged: fine_tune(world, Some(("\u{222a}merged", &merged_net)), name, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.divergence.total_cmp(&b.divergence).then_with(|| a.target.cmp(&b.target)));
    Ok(MergedStudyReport {
        seed: world.seed,
        reference,
        merged_profile,
        merge_discrepancy,
        rows,
    })
}

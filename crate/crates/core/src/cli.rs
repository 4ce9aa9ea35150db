//! Command-line surface. Tables go to stdout as CSV; notes go to stderr.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::calibrate::{attempts_to_best, gain_table, tune_k, EvaluationConfig, TrainingTask, P2L_METHOD};
use crate::error::{Error, Result};
use crate::estimator::{baseline_select, merge_profiles, rank_by_distance, rank_by_size, score_sources, Baseline};
use crate::io::{read_embeddings, read_profile_file, ProfileRegistry};
use crate::oracle::{self, generate_world, merged_source_study, run_study, OracleConfig, WorldSpec};
use crate::summarize::build_profile;
use crate::types::{DatasetProfile, DivergenceKind, EstimatorConfig, ImprovementRecord, KlDirection, Role, Summarizer};

#[derive(Debug, Parser)]
#[command(name = "p2l", version, about = "Pick a transfer-learning source from dataset summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Summarize an embedding file and store the profile in a registry.
    Profile(ProfileArgs),
    /// List the profiles in a registry.
    List(RegistryArg),
    /// Score and rank the registry's sources for a target.
    Rank(RankArgs),
    /// Tune k and the distance on measured improvements.
    Calibrate(CalibrateArgs),
    /// Gain table and attempts-to-best for measured improvements.
    Evaluate(EvaluateArgs),
    /// Pool several source profiles into one.
    Merge(MergeArgs),
    /// Run a full study on a synthetic oracle world.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct RegistryArg {
    /// Profile registry directory.
    #[arg(long, env = "P2L_REGISTRY")]
    registry: PathBuf,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Embedding file (CSV or binary).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    name: String,
    /// Dataset size, or `auto` for the number of embedded rows.
    #[arg(long, default_value = "auto")]
    size: String,
    /// `mean` or `trimmed:<fraction>`.
    #[arg(long, default_value = "mean")]
    summarizer: Summarizer,
    /// `source` or `target`.
    #[arg(long, default_value = "source", value_parser = parse_role)]
    role: Role,
    /// Replace an existing profile of the same name.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Debug, Args)]
struct ScoringArgs {
    #[arg(long, default_value = "KL")]
    distance: DivergenceKind,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    k: f64,
    /// Smoothing for probability distances.
    #[arg(long, default_value_t = crate::types::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Use KL(source ‖ target) instead of KL(target ‖ source).
    #[arg(long)]
    kl_source_target: bool,
    /// Allow profiles from different extractors.
    #[arg(long)]
    allow_mixed_extractors: bool,
}

impl ScoringArgs {
    fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            epsilon: self.epsilon,
            kl_direction: if self.kl_source_target {
                KlDirection::SourceTarget
            } else {
                KlDirection::TargetSource
            },
            allow_mixed_extractors: self.allow_mixed_extractors,
            ..EstimatorConfig::new(self.distance, self.k)
        }
    }
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Target: a profile JSON file, an embedding file, or a profile name in the registry.
    #[arg(long)]
    target: String,
    /// Size of the target dataset when `--target` is an embedding file.
    #[arg(long)]
    target_size: Option<u64>,
    #[arg(long, default_value = "mean")]
    summarizer: Summarizer,
    /// Print only the first T sources.
    #[arg(long)]
    top: Option<usize>,
    /// Append the picks of the baseline strategies.
    #[arg(long)]
    baselines: bool,
    /// Fixed reference source for B2.
    #[arg(long)]
    reference: Option<String>,
    /// Seed for the random pick B3.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// CSV with columns target,source,perf_transfer,perf_scratch.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Where to write the grid (k,distance,mean_rho).
    #[arg(long)]
    out: PathBuf,
    /// Distance kinds to search (comma separated); all by default.
    #[arg(long, value_delimiter = ',')]
    distances: Vec<DivergenceKind>,
    #[arg(long, default_value_t = 1)]
    top_t: usize,
    #[arg(long, default_value_t = crate::types::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    allow_mixed_extractors: bool,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with columns target,source,perf_transfer,perf_scratch.
    #[arg(long)]
    ground_truth: PathBuf,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// Name of the merged profile.
    #[arg(long)]
    name: String,
    /// Member profiles (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    members: Vec<String>,
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    registry: RegistryArg,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    sources: usize,
    #[arg(long, default_value_t = 8)]
    targets: usize,
    /// Extra targets used only for calibration.
    #[arg(long, default_value_t = WorldSpec::DEFAULT_CALIBRATION_TARGETS)]
    calibration_targets: usize,
    #[arg(long)]
    out: PathBuf,
}

fn parse_role(s: &str) -> std::result::Result<Role, String> {
    match s.to_ascii_lowercase().as_str() {
        "source" => Ok(Role::Source),
        "target" => Ok(Role::Target),
        _ => Err(format!("unknown role `{s}` (expected source or target)")),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut out = String::new();
    match execute(cli.command, &mut out) {
        Ok(()) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, out: &mut String) -> Result<()> {
    match command {
        Command::Profile(a) => cmd_profile(a, out),
        Command::List(a) => cmd_list(a, out),
        Command::Rank(a) => cmd_rank(a, out),
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Merge(a) => cmd_merge(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    }
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::Source => "source",
        Role::Target => "target",
    }
}

fn cmd_profile(a: ProfileArgs, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry.registry)?;
    let matrix = read_embeddings(&a.input)?;
    let size = match a.size.as_str() {
        "auto" => None,
        s => Some(
            s.parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("--size must be a positive integer or `auto`, got `{s}`")))?,
        ),
    };
    let profile = build_profile(&a.name, &matrix, size, a.summarizer, a.role)?;
    let path = registry.save(&profile, a.force)?;
    eprintln!("wrote {}", path.display());
    out.push_str("name,role,size,dim,extractor_id\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        profile.name,
        role_str(profile.role),
        profile.size,
        profile.dim(),
        profile.extractor_id
    );
    Ok(())
}

fn cmd_list(a: RegistryArg, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry)?;
    out.push_str("name,role,size,dim,extractor_id\n");
    for p in registry.load_all()? {
        let _ = writeln!(out, "{},{},{},{},{}", p.name, role_str(p.role), p.size, p.dim(), p.extractor_id);
    }
    Ok(())
}

fn sources_of(registry: &ProfileRegistry, exclude: Option<&str>) -> Result<Vec<DatasetProfile>> {
    Ok(registry
        .load_all()?
        .into_iter()
        .filter(|p| p.role == Role::Source && Some(p.name.as_str()) != exclude)
        .collect())
}

fn load_target(
    registry: &ProfileRegistry,
    spec: &str,
    size: Option<u64>,
    summarizer: Summarizer,
) -> Result<DatasetProfile> {
    let path = Path::new(spec);
    if path.is_file() {
        if path.extension().is_some_and(|e| e == "json") {
            return read_profile_file(path);
        }
        let matrix = read_embeddings(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("target")
            .to_string();
        return build_profile(name, &matrix, size, summarizer, Role::Target);
    }
    registry.load(spec)
}

fn cmd_rank(a: RankArgs, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry.registry)?;
    let cfg = a.scoring.config();
    let target = load_target(&registry, &a.target, a.target_size, a.summarizer)?;
    let sources = sources_of(&registry, Some(&target.name))?;
    let scored = score_sources(&target, &sources, &cfg)?;
    let shown = a.top.unwrap_or(scored.len()).min(scored.len());
    out.push_str("rank,name,size,distance,log_size,z_log_size,z_distance,score\n");
    for (i, s) in scored.iter().take(shown).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            i + 1,
            s.source_name,
            s.size,
            s.distance_value,
            s.log_size,
            s.z_log_size,
            s.z_distance,
            s.score
        );
    }
    if a.baselines {
        out.push_str("\nbaseline,pick\n");
        for b in [Baseline::B1, Baseline::B2, Baseline::B3, Baseline::B5] {
            match (b, &a.reference, a.seed) {
                (Baseline::B2, None, _) => eprintln!("B2 skipped: no --reference"),
                (Baseline::B3, _, None) => eprintln!("B3 skipped: no --seed"),
                _ => {
                    let pick = baseline_select(b, &target, &sources, &cfg, a.reference.as_deref(), a.seed)?;
                    let _ = writeln!(out, "{b},{}", pick.unwrap_or_default());
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    target: String,
    source: String,
    perf_transfer: f64,
    perf_scratch: f64,
}

/// Measured improvements grouped by target, in file order of first appearance.
fn read_ground_truth(path: &Path) -> Result<Vec<(String, Vec<ImprovementRecord>)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut groups: Vec<(String, Vec<ImprovementRecord>)> = Vec::new();
    for (i, row) in reader.deserialize::<TruthRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        if !row.perf_transfer.is_finite() || !row.perf_scratch.is_finite() {
            return Err(Error::NonFiniteValue { line });
        }
        let record = ImprovementRecord::new(&row.target, &row.source, row.perf_transfer, row.perf_scratch);
        match groups.iter_mut().find(|(t, _)| *t == row.target) {
            Some((_, recs)) => {
                if recs[0].perf_scratch != row.perf_scratch {
                    return Err(Error::Malformed(format!(
                        "line {line}: perf_scratch for target `{}` differs from earlier rows",
                        row.target
                    )));
                }
                if recs.iter().any(|r| r.source_name == row.source) {
                    return Err(Error::Malformed(format!(
                        "line {line}: duplicate pair ({}, {})",
                        row.target, row.source
                    )));
                }
                recs.push(record);
            }
            None => groups.push((row.target.clone(), vec![record])),
        }
    }
    if groups.is_empty() {
        return Err(Error::Malformed("ground truth has no rows".into()));
    }
    Ok(groups)
}

fn target_profile(registry: &ProfileRegistry, name: &str) -> Result<DatasetProfile> {
    registry.load(name).map_err(|e| match e {
        Error::NotFound(n) | Error::InvalidName(n) => Error::UnknownTarget(n),
        other => other,
    })
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry.registry)?;
    let groups = read_ground_truth(&a.ground_truth)?;
    let sources = sources_of(&registry, None)?;
    let tasks = groups
        .into_iter()
        .map(|(t, ground_truth)| {
            Ok(TrainingTask {
                target: target_profile(&registry, &t)?,
                ground_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eval_cfg = EvaluationConfig {
        top_t: a.top_t,
        distance_kinds: if a.distances.is_empty() {
            DivergenceKind::ALL.to_vec()
        } else {
            a.distances.clone()
        },
        ..EvaluationConfig::default()
    };
    let base = EstimatorConfig {
        epsilon: a.epsilon,
        allow_mixed_extractors: a.allow_mixed_extractors,
        ..EstimatorConfig::new(DivergenceKind::Kl, 0.0)
    };
    let report = tune_k(&tasks, &sources, &eval_cfg, &base)?;
    let mut grid = String::from("k,distance,mean_rho\n");
    for g in &report.grid {
        let _ = writeln!(grid, "{:.2},{},{}", g.k, g.distance, g.mean_rho);
    }
    fs::write(&a.out, grid)?;
    eprintln!("wrote {}", a.out.display());
    out.push_str("best_k,best_distance,best_mean_rho,top_t_hit_rate\n");
    let _ = writeln!(
        out,
        "{:.2},{},{},{}",
        report.best_k, report.best_distance, report.best_mean_rho, report.top_t_hit_rate
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry.registry)?;
    let cfg = a.scoring.config();
    let groups = read_ground_truth(&a.ground_truth)?;
    let all_sources = sources_of(&registry, None)?;
    let methods = ["B1", "B5", "B2", "B3", "B4"];
    let mut table = String::from("target,p2l_pick,best,attempts_p2l,attempts_b1,attempts_b5");
    for m in methods {
        let _ = write!(table, ",gain_{m}");
    }
    table.push('\n');
    for (t, records) in groups {
        let target = target_profile(&registry, &t)?;
        let sources = records
            .iter()
            .map(|r| {
                all_sources
                    .iter()
                    .find(|s| s.name == r.source_name)
                    .cloned()
                    .ok_or_else(|| Error::UnknownSource(r.source_name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let improvements: HashMap<String, f64> =
            records.iter().map(|r| (r.source_name.clone(), r.improvement)).collect();
        let ranking: Vec<String> = score_sources(&target, &sources, &cfg)?
            .into_iter()
            .map(|s| s.source_name)
            .collect();
        let mut picks = BTreeMap::new();
        picks.insert(P2L_METHOD.to_string(), ranking.first().cloned());
        for b in Baseline::ALL {
            let available = match b {
                Baseline::B2 => a.reference.is_some(),
                Baseline::B3 => a.seed.is_some(),
                _ => true,
            };
            if available {
                picks.insert(
                    b.to_string(),
                    baseline_select(b, &target, &sources, &cfg, a.reference.as_deref(), a.seed)?,
                );
            }
        }
        let gains = gain_table(&records, &picks)?;
        let best = records
            .iter()
            .max_by(|x, y| x.improvement.total_cmp(&y.improvement).then(y.source_name.cmp(&x.source_name)))
            .map(|r| r.source_name.clone())
            .unwrap_or_default();
        let _ = write!(
            table,
            "{},{},{},{},{},{}",
            t,
            ranking.first().cloned().unwrap_or_default(),
            best,
            attempts_to_best(&ranking, &improvements)?,
            attempts_to_best(&rank_by_size(&sources), &improvements)?,
            attempts_to_best(&rank_by_distance(&target, &sources, &cfg)?, &improvements)?,
        );
        for m in methods {
            match gains.iter().find(|g| g.method == m) {
                Some(g) => {
                    let _ = write!(table, ",{:.2}", g.gain);
                }
                None => table.push(','),
            }
        }
        table.push('\n');
    }
    if let Some(path) = &a.out {
        fs::write(path, &table)?;
        eprintln!("wrote {}", path.display());
    }
    out.push_str(&table);
    Ok(())
}

fn cmd_merge(a: MergeArgs, out: &mut String) -> Result<()> {
    let registry = ProfileRegistry::open(&a.registry.registry)?;
    if registry.contains(&a.name) && !a.force {
        return Err(Error::NameCollision(a.name));
    }
    let members = a
        .members
        .iter()
        .map(|m| registry.load(m))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_profiles(&members, &a.name)?;
    registry.save(&merged, a.force)?;
    out.push_str("name,size,dim,members\n");
    let _ = writeln!(out, "{},{},{},{}", merged.name, merged.size, merged.dim(), a.members.join("|"));
    Ok(())
}

fn truth_csv(report: &oracle::StudyReport, split: &str) -> String {
    let mut s = String::from("target,source,perf_transfer,perf_scratch\n");
    for p in report.pairs.iter().filter(|p| p.split == split) {
        let r = &p.record;
        let _ = writeln!(s, "{},{},{},{}", r.target_name, r.source_name, r.perf_transfer, r.perf_scratch);
    }
    s
}

fn cmd_simulate(a: SimulateArgs, out: &mut String) -> Result<()> {
    let spec = WorldSpec::standard(a.sources, a.targets, a.calibration_targets);
    let world = generate_world(a.seed, &spec)?;
    let cfg = OracleConfig::default();
    let est = EstimatorConfig::new(DivergenceKind::Kl, -1.0);
    let report = run_study(&world, &cfg, &est, &EvaluationConfig::default())?;
    report.write_dir(&a.out)?;
    let merged = merged_source_study(&world, &cfg, &report.estimator)?;
    fs::write(a.out.join("merged.csv"), merged.csv())?;
    fs::write(a.out.join("evaluation_truth.csv"), truth_csv(&report, "eval"))?;
    if report.calibration.is_some() {
        fs::write(a.out.join("calibration_truth.csv"), truth_csv(&report, "calibration"))?;
    }

    let registry = ProfileRegistry::open(a.out.join("registry"))?;
    for d in &world.domains {
        let profile = match d.spec.role {
            oracle::DomainRole::Source => oracle::source_profile(&world, d.name())?,
            _ => oracle::target_profile(&world, d.name(), &cfg)?,
        };
        registry.save(&profile, true)?;
    }
    eprintln!("wrote {}", a.out.display());
    out.push_str(&report.methods_csv());
    Ok(())
}

//! Desk-scale ground truth for source selection.
//!
//! A seeded [`OracleWorld`] holds labelled domains and a frozen reference
//! extractor. Real transfer outcomes come from a tiny two-layer classifier:
//! pre-trained on a source, its head is replaced and it is fine-tuned on the
//! target with the representation layer at `f · α` and the head at `α`.
//! Training from scratch on the target gives the no-transfer baseline.

mod study;
mod trainer;
mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use study::{
    merged_source_study, run_study, MergedRow, MergedStudyReport, MethodSummary, PairRecord, StudyReport,
    TargetOutcome, METHODS,
};
pub use trainer::{Gradients, Network};
pub use world::{
    generate_world, ConceptId, Domain, DomainBlueprint, DomainRole, DomainSpec, Layout, OracleWorld,
    ReferenceExtractor, Samples, WorldSpec,
};

use crate::error::{Error, Result};
use crate::summarize::build_profile;
use crate::types::{DatasetProfile, Role, Summarizer};

/// Deterministic RNG stream keyed by the world seed and a path of labels.
/// Each training run owns its own stream, so results do not depend on
/// execution order.
pub fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    feed(&seed.to_le_bytes());
    for p in parts {
        feed(&[0xff]);
        feed(p.as_bytes());
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Share of the third partition used as the target training set.
    pub target_fraction: f64,
    /// Learning-rate multiplier for the representation layer while fine-tuning.
    pub finetune_multiplier: f64,
    pub learn_rate: f64,
    pub source_epochs: usize,
    pub target_epochs: usize,
    pub batch: usize,
    pub hidden_dim: usize,
    /// Fine-tuning restarts averaged into one accuracy.
    pub restarts: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.05,
            finetune_multiplier: 0.1,
            learn_rate: 0.05,
            source_epochs: 10,
            target_epochs: 30,
            batch: 16,
            hidden_dim: 10,
            restarts: 1,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_fraction must be in (0, 1], got {}",
                self.target_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.finetune_multiplier) {
            return Err(Error::InvalidConfig(format!(
                "finetune_multiplier must be in [0, 1], got {}",
                self.finetune_multiplier
            )));
        }
        if !(self.learn_rate > 0.0) || self.batch == 0 || self.hidden_dim == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig(
                "learn_rate, batch, hidden_dim and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Profile of a domain's source training partition.
pub fn source_profile(world: &OracleWorld, name: &str) -> Result<DatasetProfile> {
    let d = world.domain(name)?;
    let m = world.extractor.embed(&d.source_train)?;
    build_profile(name, &m, None, Summarizer::Mean, Role::Source)
}

/// Profile of a domain's target training set.
pub fn target_profile(world: &OracleWorld, name: &str, cfg: &OracleConfig) -> Result<DatasetProfile> {
    let d = world.domain(name)?;
    let train = d.target_train(cfg.target_fraction);
    if train.is_empty() {
        return Err(Error::BadSpec(format!("target `{name}` has an empty training set")));
    }
    let m = world.extractor.embed(&train)?;
    build_profile(name, &m, None, Summarizer::Mean, Role::Target)
}

/// Trains a model on a domain's source training partition.
pub fn pretrain(world: &OracleWorld, name: &str, cfg: &OracleConfig) -> Result<Network> {
    let d = world.domain(name)?;
    pretrain_on(world, name, &d.source_train, cfg)
}

pub(crate) fn pretrain_on(world: &OracleWorld, key: &str, data: &Samples, cfg: &OracleConfig) -> Result<Network> {
    cfg.validate()?;
    let mut rng = stream(world.seed, &["pretrain", key]);
    let mut net = Network::new(world.feature_dim, cfg.hidden_dim, data.classes, &mut rng);
    net.train(data, cfg.source_epochs, cfg.batch, cfg.learn_rate, cfg.learn_rate, &mut rng);
    Ok(net)
}

/// Target-validation accuracy after fine-tuning `source` (or training from
/// scratch when `source` is `None`), averaged over `cfg.restarts` runs.
/// The source key names the RNG stream.
pub fn fine_tune(
    world: &OracleWorld,
    source: Option<(&str, &Network)>,
    target: &str,
    cfg: &OracleConfig,
) -> Result<f64> {
    cfg.validate()?;
    let d = world.domain(target)?;
    let train = d.target_train(cfg.target_fraction);
    if train.is_empty() {
        return Err(Error::BadSpec(format!("target `{target}` has an empty training set")));
    }
    let classes = d.spec.class_count;
    let alpha = cfg.learn_rate;
    let mut total = 0.0;
    for run in 0..cfg.restarts {
        let run_key = run.to_string();
        let net = match source {
            Some((key, pretrained)) => {
                let mut rng = stream(world.seed, &["finetune", target, key, &run_key]);
                let mut net = pretrained.clone();
                net.reset_head(classes, &mut rng);
                net.train(&train, cfg.target_epochs, cfg.batch, cfg.finetune_multiplier * alpha, alpha, &mut rng);
                net
            }
            None => {
                let mut rng = stream(world.seed, &["finetune", target, "\u{2205}scratch", &run_key]);
                let mut net = Network::new(world.feature_dim, cfg.hidden_dim, classes, &mut rng);
                net.train(&train, cfg.target_epochs, cfg.batch, alpha, alpha, &mut rng);
                net
            }
        };
        total += net.accuracy(&d.target_val);
    }
    Ok(total / cfg.restarts as f64)
}

/// `P(M(target, source))`: pre-train on `source` (or nothing) and fine-tune on `target`.
pub fn train_transfer(world: &OracleWorld, source: Option<&str>, target: &str, cfg: &OracleConfig) -> Result<f64> {
    match source {
        Some(s) => {
            let net = pretrain(world, s, cfg)?;
            fine_tune(world, Some((s, &net)), target, cfg)
        }
        None => fine_tune(world, None, target, cfg),
    }
}

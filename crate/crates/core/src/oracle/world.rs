//! Synthetic domains with a controllable overlap structure.
//!
//! Feature space is split by a random orthonormal basis into a global block,
//! shared by every domain, and one block per region. A concept (class
//! centroid) has a global part and a part in its region's block; a region
//! also shifts all of its concepts by a common offset. Domains draw their
//! classes from concepts, so two domains transfer well when they share a
//! region and look alike to the reference extractor for the same reason.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::stream;
use crate::error::{Error, Result};
use crate::types::EmbeddingMatrix;

/// Labelled feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Samples {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>, classes: usize) -> Self {
        assert_eq!(features.len(), labels.len() * dim);
        Self {
            dim,
            features,
            labels,
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Samples {
        let n = n.min(self.len());
        Samples::new(
            self.dim,
            self.features[..n * self.dim].to_vec(),
            self.labels[..n].to_vec(),
            self.classes,
        )
    }

    /// The rows repeated `times` times.
    pub fn tile(&self, times: usize) -> Samples {
        Samples::new(
            self.dim,
            self.features.repeat(times),
            self.labels.repeat(times),
            self.classes,
        )
    }

    fn slice(&self, start: usize, end: usize) -> Samples {
        Samples::new(
            self.dim,
            self.features[start * self.dim..end * self.dim].to_vec(),
            self.labels[start..end].to_vec(),
            self.classes,
        )
    }
}

/// Identifies one concept: its region and its index within the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId {
    pub region: usize,
    pub index: usize,
}

impl ConceptId {
    pub fn new(region: usize, index: usize) -> Self {
        Self { region, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainRole {
    /// Provides a candidate source model (its source partitions).
    Source,
    /// Evaluation target.
    Target,
    /// Target used only to calibrate `k`.
    CalibrationTarget,
}

/// Recipe for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBlueprint {
    pub name: String,
    pub concepts: Vec<ConceptId>,
    /// Items before tiling; split into four equal partitions.
    pub items: usize,
    pub role: DomainRole,
    /// Every partition is repeated this many times after sampling.
    pub repeat: usize,
    /// Domains with the same key, concepts and item count draw identical samples.
    pub sample_key: Option<String>,
}

impl DomainBlueprint {
    pub fn new(name: impl Into<String>, concepts: Vec<ConceptId>, items: usize, role: DomainRole) -> Self {
        Self {
            name: name.into(),
            concepts,
            items,
            role,
            repeat: 1,
            sample_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Seeded random layout with the given domain counts.
    Standard {
        sources: usize,
        targets: usize,
        calibration_targets: usize,
    },
    Explicit {
        domains: Vec<DomainBlueprint>,
        /// Fixed reference source (baseline B2 and the merged-source study).
        reference: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub feature_dim: usize,
    pub embed_dim: usize,
    /// Dimensions shared by all regions.
    pub global_rank: usize,
    pub regions: usize,
    pub concepts_per_region: usize,
    pub global_scale: f64,
    pub region_scale: f64,
    pub region_offset: f64,
    pub noise: f64,
    /// Item range for standard-layout sources, log-spaced.
    pub source_items: (usize, usize),
    /// Chance that the largest standard-layout source covers each other region.
    pub breadth: f64,
    pub target_items: usize,
    pub layout: Layout,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self::standard(6, 8, Self::DEFAULT_CALIBRATION_TARGETS)
    }
}

impl WorldSpec {
    pub const DEFAULT_CALIBRATION_TARGETS: usize = 32;

    pub fn standard(sources: usize, targets: usize, calibration_targets: usize) -> Self {
        Self {
            feature_dim: 16,
            embed_dim: 32,
            global_rank: 4,
            regions: 3,
            concepts_per_region: 6,
            global_scale: 1.75,
            region_scale: 1.0,
            region_offset: 2.0,
            noise: 1.0,
            source_items: (400, 12_800),
            breadth: 0.5,
            target_items: 1_600,
            layout: Layout::Standard {
                sources,
                targets,
                calibration_targets,
            },
        }
    }

    pub fn explicit(domains: Vec<DomainBlueprint>, reference: Option<String>) -> Self {
        Self {
            layout: Layout::Explicit { domains, reference },
            ..Self::standard(0, 0, 0)
        }
    }

    fn region_rank(&self) -> usize {
        (self.feature_dim - self.global_rank) / self.regions.max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embed_dim == 0 {
            return Err(Error::BadSpec("dimensions must be positive".into()));
        }
        if self.regions == 0 || self.global_rank > self.feature_dim || self.region_rank() == 0 {
            return Err(Error::BadSpec(format!(
                "{} regions do not fit in {} features with global rank {}",
                self.regions, self.feature_dim, self.global_rank
            )));
        }
        if self.concepts_per_region < 2 || !(self.noise >= 0.0) {
            return Err(Error::BadSpec("need ≥ 2 concepts per region and non-negative noise".into()));
        }
        Ok(())
    }
}

/// Realized domain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    pub class_count: usize,
    pub concepts: Vec<ConceptId>,
    pub centroids: Vec<Vec<f64>>,
    pub items: usize,
    pub role: DomainRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub spec: DomainSpec,
    pub source_train: Samples,
    pub source_val: Samples,
    /// Third partition; the target training set is a prefix of it.
    pub target_pool: Samples,
    pub target_val: Samples,
}

impl Domain {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// First `⌊fraction · |partition|⌋` items of the third partition.
    pub fn target_train(&self, fraction: f64) -> Samples {
        self.target_pool
            .head((fraction * self.target_pool.len() as f64).floor() as usize)
    }

    pub fn primary_region(&self) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for c in &self.spec.concepts {
            *counts.entry(c.region).or_insert(0usize) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(r, _)| r)
            .unwrap_or(0)
    }
}

/// Frozen random rectified affine map standing in for a pre-trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceExtractor {
    pub id: String,
    pub input_dim: usize,
    pub output_dim: usize,
    /// output × input, row-major
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ReferenceExtractor {
    pub fn embed_row(&self, x: &[f64], out: &mut Vec<f64>) {
        for j in 0..self.output_dim {
            let row = &self.weights[j * self.input_dim..(j + 1) * self.input_dim];
            let a = self.bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out.push(a.max(0.0));
        }
    }

    pub fn embed(&self, samples: &Samples) -> Result<EmbeddingMatrix> {
        let mut values = Vec::with_capacity(samples.len() * self.output_dim);
        for i in 0..samples.len() {
            self.embed_row(samples.row(i), &mut values);
        }
        EmbeddingMatrix::new(samples.len(), self.output_dim, values, self.id.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleWorld {
    pub seed: u64,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub domains: Vec<Domain>,
    pub extractor: ReferenceExtractor,
    pub reference_source: Option<String>,
}

impl OracleWorld {
    pub fn domain(&self, name: &str) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.spec.name == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    fn with_role(&self, role: DomainRole) -> impl Iterator<Item = &Domain> {
        self.domains.iter().filter(move |d| d.spec.role == role)
    }

    pub fn sources(&self) -> Vec<&Domain> {
        self.with_role(DomainRole::Source).collect()
    }

    pub fn targets(&self) -> Vec<&Domain> {
        self.with_role(DomainRole::Target).collect()
    }

    pub fn calibration_targets(&self) -> Vec<&Domain> {
        self.with_role(DomainRole::CalibrationTarget).collect()
    }
}

fn orthonormal_basis(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Concept centroids indexed `[region][index]`.
fn concept_bank(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    let f = spec.feature_dim;
    let basis = orthonormal_basis(rng, f);
    let rr = spec.region_rank();
    let global = &basis[..spec.global_rank];
    (0..spec.regions)
        .map(|r| {
            let block = &basis[spec.global_rank + r * rr..spec.global_rank + (r + 1) * rr];
            let mut offset: Vec<f64> = (0..rr).map(|_| StandardNormal.sample(rng)).collect();
            let norm = offset.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            offset.iter_mut().for_each(|x| *x *= spec.region_offset / norm);
            (0..spec.concepts_per_region)
                .map(|_| {
                    let mut c = vec![0.0; f];
                    for b in global {
                        let g: f64 = StandardNormal.sample(rng);
                        c.iter_mut().zip(b).for_each(|(x, y)| *x += spec.global_scale * g * y);
                    }
                    for (b, off) in block.iter().zip(&offset) {
                        let l: f64 = StandardNormal.sample(rng);
                        let coef = off + spec.region_scale * l;
                        c.iter_mut().zip(b).for_each(|(x, y)| *x += coef * y);
                    }
                    c
                })
                .collect()
        })
        .collect()
}

fn standard_layout(
    spec: &WorldSpec,
    sources: usize,
    targets: usize,
    calibration_targets: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<DomainBlueprint>, Option<String>) {
    let regions = spec.regions;
    let pool: Vec<usize> = (0..spec.concepts_per_region).collect();
    let mut region_order: Vec<usize> = (0..regions).collect();
    region_order.shuffle(rng);

    let (lo, hi) = (spec.source_items.0 as f64, spec.source_items.1 as f64);
    // The reference source `src-0` is the second largest; the rest are shuffled.
    let mut size_rank: Vec<usize> = (0..sources).collect();
    if sources > 1 {
        size_rank.swap(0, sources - 2);
        size_rank[1..].shuffle(rng);
    }

    let mut out = Vec::new();
    for (i, &rank) in size_rank.iter().enumerate() {
        let q = if sources > 1 { rank as f64 / (sources - 1) as f64 } else { 0.5 };
        let jitter = rng.random_range(0.85..1.15);
        let items = (lo * (hi / lo).powf(q) * jitter).round() as usize;
        let region = region_order[i % regions];
        let max_count = spec.concepts_per_region.clamp(3, 6);
        let count = 3 + (q * (max_count - 3) as f64).round() as usize;
        let mut concepts: Vec<ConceptId> = pool
            .choose_multiple(rng, count.min(pool.len()))
            .map(|&j| ConceptId::new(region, j))
            .collect();
        // Larger sources tend to be broader and reach into other regions.
        if i > 0 {
            for step in 1..regions {
                if rng.random_bool((spec.breadth * q).clamp(0.0, 1.0)) {
                    let other = (region + step) % regions;
                    concepts.extend(pool.choose_multiple(rng, 2).map(|&j| ConceptId::new(other, j)));
                }
            }
        }
        concepts.sort();
        out.push(DomainBlueprint::new(format!("src-{i}"), concepts, items, DomainRole::Source));
    }

    let mut add_targets = |prefix: &str, n: usize, role: DomainRole, rng: &mut ChaCha8Rng| {
        let start = rng.random_range(0..regions);
        for j in 0..n {
            let region = (start + j) % regions;
            let mut concepts: Vec<ConceptId> = pool
                .choose_multiple(rng, 3.min(pool.len()))
                .map(|&c| ConceptId::new(region, c))
                .collect();
            concepts.sort();
            out.push(DomainBlueprint::new(format!("{prefix}-{j}"), concepts, spec.target_items, role));
        }
    };
    add_targets("tgt", targets, DomainRole::Target, rng);
    add_targets("cal", calibration_targets, DomainRole::CalibrationTarget, rng);
    let reference = (sources > 0).then(|| "src-0".to_string());
    (out, reference)
}

fn sample_domain(
    world_seed: u64,
    bp: &DomainBlueprint,
    centroids: &[Vec<f64>],
    noise: f64,
) -> [Samples; 4] {
    let key = bp.sample_key.as_deref().unwrap_or(&bp.name);
    let mut rng = stream(world_seed, &["domain", key]);
    let dim = centroids[0].len();
    let classes = centroids.len();
    let mut labels: Vec<usize> = (0..bp.items).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("valid noise");
    let mut features = Vec::with_capacity(bp.items * dim);
    for &y in &labels {
        features.extend(centroids[y].iter().map(|c| c + normal.sample(&mut rng)));
    }
    let all = Samples::new(dim, features, labels, classes);
    let part = bp.items / 4;
    let repeat = bp.repeat.max(1);
    [0, 1, 2, 3].map(|i| all.slice(i * part, (i + 1) * part).tile(repeat))
}

/// Builds a world. Everything is a pure function of `seed` and `spec`.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<OracleWorld> {
    spec.validate()?;
    let mut rng = stream(seed, &["world"]);
    let bank = concept_bank(spec, &mut rng);

    let mut extractor_rng = stream(seed, &["extractor"]);
    let w_std = (1.0 / spec.feature_dim as f64).sqrt();
    let normal = Normal::new(0.0, w_std).expect("finite std");
    let extractor = ReferenceExtractor {
        id: format!("oracle-ref-{seed:016x}"),
        input_dim: spec.feature_dim,
        output_dim: spec.embed_dim,
        weights: (0..spec.embed_dim * spec.feature_dim)
            .map(|_| normal.sample(&mut extractor_rng))
            .collect(),
        bias: (0..spec.embed_dim)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut extractor_rng); 0.1 * z })
            .collect(),
    };

    let (blueprints, reference) = match &spec.layout {
        Layout::Standard {
            sources,
            targets,
            calibration_targets,
        } => standard_layout(spec, *sources, *targets, *calibration_targets, &mut stream(seed, &["layout"])),
        Layout::Explicit { domains, reference } => (domains.clone(), reference.clone()),
    };
    if blueprints.len() < 2 {
        return Err(Error::BadSpec("a world needs at least two domains".into()));
    }
    let mut names = std::collections::HashSet::new();
    let mut domains = Vec::with_capacity(blueprints.len());
    for bp in &blueprints {
        if !names.insert(bp.name.clone()) {
            return Err(Error::BadSpec(format!("duplicate domain `{}`", bp.name)));
        }
        if bp.concepts.len() < 2 {
            return Err(Error::BadSpec(format!("domain `{}` needs at least two classes", bp.name)));
        }
        if bp.items < 8 {
            return Err(Error::BadSpec(format!("domain `{}` is too small to split", bp.name)));
        }
        let centroids = bp
            .concepts
            .iter()
            .map(|c| {
                bank.get(c.region)
                    .and_then(|r| r.get(c.index))
                    .cloned()
                    .ok_or_else(|| Error::BadSpec(format!("concept {c:?} is outside the bank")))
            })
            .collect::<Result<Vec<_>>>()?;
        let [source_train, source_val, target_pool, target_val] = sample_domain(seed, bp, &centroids, spec.noise);
        domains.push(Domain {
            spec: DomainSpec {
                name: bp.name.clone(),
                class_count: centroids.len(),
                concepts: bp.concepts.clone(),
                centroids,
                items: bp.items * bp.repeat.max(1),
                role: bp.role,
            },
            source_train,
            source_val,
            target_pool,
            target_val,
        });
    }
    if let Some(r) = &reference {
        let d = domains
            .iter()
            .find(|d| &d.spec.name == r)
            .ok_or_else(|| Error::BadSpec(format!("reference `{r}` is not a domain")))?;
        if d.spec.role != DomainRole::Source {
            return Err(Error::BadSpec(format!("reference `{r}` is not a source")));
        }
    }
    Ok(OracleWorld {
        seed,
        feature_dim: spec.feature_dim,
        embed_dim: spec.embed_dim,
        domains,
        extractor,
        reference_source: reference,
    })
}

//! Top-1 prediction, nucleus sampling and structure-preserved sampling.
//!
//! Structure-preserved sampling first predicts a top-1 assignment, groups
//! elements whose predicted labels agree (per attribute), then resamples
//! in raster order: the first visited member of a group draws, every later
//! member copies that draw. Decoding always conditions on the labels that
//! were finally assigned to earlier elements.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc_model::{Attribute, DesignDocument, TypographicAttributes};
use crate::error::{Error, Result};
use crate::model::{ElementLogits, EncodedContext, TypographyModel};

/// Nucleus mass used for font size, angle, letter spacing and line spacing.
pub const GEOMETRIC_P: f64 = 0.1;
pub const DEFAULT_P: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Plain,
    StructurePreserved,
    Top1,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Plain => "plain",
            SamplingMode::StructurePreserved => "structure_preserved",
            SamplingMode::Top1 => "top1",
        }
    }

    pub fn from_name(name: &str) -> Option<SamplingMode> {
        [SamplingMode::Plain, SamplingMode::StructurePreserved, SamplingMode::Top1]
            .into_iter()
            .find(|m| m.name() == name)
    }
}

/// Fixes the label of one predicted cluster before sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lock {
    pub attribute: Attribute,
    pub cluster: usize,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Nucleus mass per attribute name.
    pub p_k: BTreeMap<Attribute, f64>,
    pub mode: SamplingMode,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locks: Vec<Lock>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let p_k = Attribute::ALL
            .iter()
            .map(|&a| (a, if a.is_geometric() { GEOMETRIC_P } else { DEFAULT_P }))
            .collect();
        SamplingConfig {
            p_k,
            mode: SamplingMode::StructurePreserved,
            n_samples: 10,
            seed: 0,
            locks: Vec::new(),
        }
    }
}

impl SamplingConfig {
    pub fn with_p(mut self, attr: Attribute, p: f64) -> Self {
        self.p_k.insert(attr, p);
        self
    }

    pub fn p(&self, attr: Attribute) -> f64 {
        self.p_k
            .get(&attr)
            .copied()
            .unwrap_or(if attr.is_geometric() { GEOMETRIC_P } else { DEFAULT_P })
    }

    pub fn validate(&self) -> Result<()> {
        for (attr, p) in &self.p_k {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::validation(format!("p_k.{attr}"), format!("{p} outside (0, 1]")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::validation("n_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-attribute partition of the elements. `assignments[k][t]` is the
/// cluster id of element `t`; ids are numbered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureClusters {
    pub assignments: BTreeMap<Attribute, Vec<usize>>,
}

impl StructureClusters {
    pub fn of(&self, attr: Attribute) -> &[usize] {
        &self.assignments[&attr]
    }

    pub fn cluster_count(&self, attr: Attribute) -> usize {
        self.of(attr).iter().max().map_or(0, |m| m + 1)
    }

    /// Members of every cluster, in cluster id order.
    pub fn groups(&self, attr: Attribute) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.cluster_count(attr)];
        for (t, &c) in self.of(attr).iter().enumerate() {
            groups[c].push(t);
        }
        groups
    }

    /// True when every cluster of `self` lies inside one cluster of `other`.
    pub fn refines(&self, other: &StructureClusters) -> bool {
        Attribute::ALL.iter().all(|&a| {
            let mut image: BTreeMap<usize, usize> = BTreeMap::new();
            self.of(a)
                .iter()
                .zip(other.of(a))
                .all(|(&mine, &theirs)| *image.entry(mine).or_insert(theirs) == theirs)
        })
    }
}

/// Groups equal labels, numbering clusters by first occurrence.
pub fn linkage(labels: &[u16]) -> Vec<usize> {
    let mut ids: Vec<(u16, usize)> = Vec::new();
    labels
        .iter()
        .map(|l| match ids.iter().find(|(v, _)| v == l) {
            Some(&(_, id)) => id,
            None => {
                ids.push((*l, ids.len()));
                ids.len() - 1
            }
        })
        .collect()
}

pub fn cluster_by_linkage(labels: &[TypographicAttributes]) -> StructureClusters {
    StructureClusters {
        assignments: Attribute::ALL
            .iter()
            .map(|&a| (a, linkage(&labels.iter().map(|l| l.get(a)).collect::<Vec<_>>())))
            .collect(),
    }
}

/// Keeps the smallest most-probable prefix holding mass `p` and
/// renormalizes. Ties in probability are ordered by ascending label id.
pub fn top_p_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::OutOfRange(format!("top-p mass {p} outside (0, 1]")));
    }
    if probs.is_empty() || probs.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(Error::validation("top_p_filter", "probabilities must be finite and non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::validation("top_p_filter", format!("probabilities sum to {total}")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = 0.0;
    let mut out = vec![0.0; probs.len()];
    for &i in &order {
        out[i] = probs[i];
        kept += probs[i];
        if kept >= p {
            break;
        }
    }
    out.iter_mut().for_each(|q| *q /= kept);
    Ok(out)
}

/// Index of the largest probability, ties to the lowest id.
pub fn argmax(probs: &[f64]) -> u16 {
    let mut best = 0;
    for (i, v) in probs.iter().enumerate() {
        if *v > probs[best] {
            best = i;
        }
    }
    best as u16
}

/// Inverse-CDF draw over ascending label ids with `u` in `[0, 1)`.
pub fn draw(probs: &[f64], u: f64) -> u16 {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, q) in probs.iter().enumerate() {
        if *q > 0.0 {
            cum += q;
            last = i;
            if u < cum {
                return i as u16;
            }
        }
    }
    last as u16
}

/// Anything that can produce next-element logits given earlier labels.
pub trait LogitSource {
    fn len(&self) -> usize;
    fn logits(&self, prev: &[TypographicAttributes]) -> Result<ElementLogits>;
}

/// A trained model bound to one encoded document.
pub struct ModelSource<'m> {
    pub model: &'m TypographyModel,
    pub context: EncodedContext,
}

impl<'m> ModelSource<'m> {
    pub fn new(model: &'m TypographyModel, doc: &DesignDocument) -> Result<Self> {
        let prep = model.prepare(doc)?;
        Ok(ModelSource {
            model,
            context: model.encode_context(&prep)?,
        })
    }
}

impl LogitSource for ModelSource<'_> {
    fn len(&self) -> usize {
        self.context.len()
    }

    fn logits(&self, prev: &[TypographicAttributes]) -> Result<ElementLogits> {
        self.model.decode_logits(&self.context, prev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Prediction {
    pub labels: Vec<TypographicAttributes>,
    pub clusters: StructureClusters,
}

/// Autoregressive argmax decoding in raster order.
pub fn predict_top1_with(src: &dyn LogitSource) -> Result<Top1Prediction> {
    let mut labels: Vec<TypographicAttributes> = Vec::with_capacity(src.len());
    for _ in 0..src.len() {
        let logits = src.logits(&labels)?;
        let mut bins = [0u16; 8];
        for attr in Attribute::ALL {
            bins[attr.index()] = argmax(&logits.probabilities(attr));
        }
        labels.push(TypographicAttributes::from_array(bins));
    }
    let clusters = cluster_by_linkage(&labels);
    Ok(Top1Prediction { labels, clusters })
}

pub fn predict_top1(model: &TypographyModel, doc: &DesignDocument) -> Result<Top1Prediction> {
    predict_top1_with(&ModelSource::new(model, doc)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub doc_id: String,
    pub mode: SamplingMode,
    pub p_k: BTreeMap<Attribute, f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locks: Vec<Lock>,
    /// Clusters the samples were constrained to (the top-1 structure unless
    /// a different structure was supplied).
    pub clusters: StructureClusters,
    /// `samples[n][t]` holds the 8 bins of element `t` in sample `n`.
    pub samples: Vec<Vec<[u16; 8]>>,
    /// Linkage clusters of each sample's own labels.
    pub realized_clusters: Vec<StructureClusters>,
}

impl SampleSet {
    pub fn sample_labels(&self, n: usize) -> Vec<TypographicAttributes> {
        self.samples[n].iter().map(|b| TypographicAttributes::from_array(*b)).collect()
    }

    /// Labels of attribute `attr` at element `t`, one per sample.
    pub fn column(&self, attr: Attribute, t: usize) -> Vec<u16> {
        self.samples.iter().map(|s| s[t][attr.index()]).collect()
    }

    pub fn element_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for one (seed, sample, attribute) triple.
pub fn stream(seed: u64, sample: usize, attr: Attribute) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ sample as u64) ^ attr.index() as u64);
    ChaCha8Rng::seed_from_u64(s)
}

fn resolve_locks(locks: &[Lock], clusters: &StructureClusters) -> Result<BTreeMap<(Attribute, usize), u16>> {
    let mut fixed = BTreeMap::new();
    for lock in locks {
        let count = clusters.cluster_count(lock.attribute);
        if lock.cluster >= count {
            return Err(Error::validation(
                format!("locks.{}", lock.attribute),
                format!("unknown cluster {} ({} predicted)", lock.cluster, count),
            ));
        }
        if lock.label as usize >= lock.attribute.cardinality() {
            return Err(Error::validation(
                format!("locks.{}", lock.attribute),
                format!("label {} outside 0..{}", lock.label, lock.attribute.cardinality()),
            ));
        }
        fixed.insert((lock.attribute, lock.cluster), lock.label);
    }
    Ok(fixed)
}

/// Sampling against an explicit structure. `structure` replaces the top-1
/// clusters when given; in plain mode it is only used to apply locks.
pub fn sample_with(
    src: &dyn LogitSource,
    doc_id: &str,
    cfg: &SamplingConfig,
    structure: Option<StructureClusters>,
) -> Result<SampleSet> {
    cfg.validate()?;
    let t_count = src.len();
    let clusters = match structure {
        Some(s) => {
            if Attribute::ALL.iter().any(|a| s.assignments.get(a).map_or(true, |v| v.len() != t_count)) {
                return Err(Error::validation("structure", format!("must cover {t_count} elements per attribute")));
            }
            s
        }
        None => predict_top1_with(src)?.clusters,
    };
    let locked = resolve_locks(&cfg.locks, &clusters)?;
    let copy = matches!(cfg.mode, SamplingMode::StructurePreserved | SamplingMode::Top1);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut realized = Vec::with_capacity(cfg.n_samples);
    for n in 0..cfg.n_samples {
        let mut streams: Vec<ChaCha8Rng> = Attribute::ALL.iter().map(|&a| stream(cfg.seed, n, a)).collect();
        let mut assigned: BTreeMap<(Attribute, usize), u16> = locked.clone();
        let mut labels: Vec<TypographicAttributes> = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let logits = src.logits(&labels)?;
            let mut bins = [0u16; 8];
            for attr in Attribute::ALL {
                // One uniform per element keeps every stream aligned
                // regardless of copies and locks.
                let u: f64 = streams[attr.index()].gen();
                let key = (attr, clusters.of(attr)[t]);
                let bin = if let Some(&fixed) = assigned.get(&key).filter(|_| copy || locked.contains_key(&key)) {
                    fixed
                } else {
                    let probs = logits.probabilities(attr);
                    let b = match cfg.mode {
                        SamplingMode::Top1 => argmax(&probs),
                        _ => draw(&top_p_filter(&probs, cfg.p(attr))?, u),
                    };
                    if copy {
                        assigned.insert(key, b);
                    }
                    b
                };
                bins[attr.index()] = bin;
            }
            labels.push(TypographicAttributes::from_array(bins));
        }
        realized.push(cluster_by_linkage(&labels));
        samples.push(labels.iter().map(|l| l.to_array()).collect());
    }
    Ok(SampleSet {
        doc_id: doc_id.to_string(),
        mode: cfg.mode,
        p_k: Attribute::ALL.iter().map(|&a| (a, cfg.p(a))).collect(),
        seed: cfg.seed,
        locks: cfg.locks.clone(),
        clusters,
        samples,
        realized_clusters: realized,
    })
}

pub fn sample(model: &TypographyModel, doc: &DesignDocument, cfg: &SamplingConfig) -> Result<SampleSet> {
    sample_with(&ModelSource::new(model, doc)?, &doc.id, cfg, None)
}

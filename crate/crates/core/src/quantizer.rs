//! k-means codebooks that discretize continuous context and typographic
//! attributes into categorical bins.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::{Lab, Rgb};
use crate::doc_model::{
    context_values, Alignment, Attribute, ContextAttribute, DesignDocument, RawTypography, TypographicAttributes,
};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 200;
pub const COLOR_BINS: usize = 64;

/// One-dimensional codebook with strictly ascending centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub attribute: String,
    pub k: usize,
    pub centroids: Vec<f64>,
}

/// Diagnostics of a Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// True when the assignment stopped changing before the iteration cap.
    pub converged: bool,
    /// Within-cluster SSE after each update step.
    pub sse: Vec<f64>,
}

impl Codebook {
    pub fn new(attribute: impl Into<String>, centroids: Vec<f64>) -> Result<Codebook> {
        let attribute = attribute.into();
        if centroids.is_empty() {
            return Err(Error::validation(format!("codebook {attribute}"), "no centroids"));
        }
        if centroids.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::validation(format!("codebook {attribute}"), "centroids not strictly ascending"));
        }
        Ok(Codebook {
            attribute,
            k: centroids.len(),
            centroids,
        })
    }

    /// Nearest centroid; ties go to the lower index.
    pub fn encode(&self, value: f64) -> u16 {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = (value - c).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best as u16
    }

    pub fn decode(&self, bin: u16) -> Result<f64> {
        self.centroids.get(bin as usize).copied().ok_or_else(|| {
            Error::OutOfRange(format!("bin {bin} for codebook {} with k={}", self.attribute, self.k))
        })
    }
}

fn sse_1d(sorted: &[f64], centroids: &[f64], assign: &[usize]) -> f64 {
    sorted.iter().zip(assign).map(|(v, &a)| (v - centroids[a]).powi(2)).sum()
}

/// Lloyd's algorithm in one dimension, seeded with evenly spaced quantiles.
///
/// When the input has at most `k` distinct values the centroids are exactly
/// those values. Coinciding centroids are merged after the fit, so the
/// returned codebook may have fewer than `k` entries.
pub fn fit_kmeans_1d(attribute: &str, values: &[f64], k: usize, seed: u64) -> Result<(Codebook, FitReport)> {
    if values.is_empty() {
        return Err(Error::validation(format!("codebook {attribute}"), "no values to fit"));
    }
    if k == 0 {
        return Err(Error::Config(format!("codebook {attribute}: k must be positive")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("codebook {attribute}"), format!("non-finite value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= k {
        let report = FitReport {
            iterations: 0,
            converged: true,
            sse: vec![0.0],
        };
        return Ok((Codebook::new(attribute, distinct)?, report));
    }

    let n = sorted.len();
    let mut centroids: Vec<f64> = (0..k)
        .map(|i| sorted[(((2 * i + 1) * n) / (2 * k)).min(n - 1)])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![usize::MAX; n];
    let mut report = FitReport {
        iterations: 0,
        converged: false,
        sse: Vec::new(),
    };
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (v, a) in sorted.iter().zip(assign.iter_mut()) {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = (v - c).abs();
                if d < best_dist {
                    best = j;
                    best_dist = d;
                }
            }
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in sorted.iter().zip(&assign) {
            sums[a] += v;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        // an empty cluster is moved onto a data value no centroid sits on
        for j in 0..k {
            if counts[j] == 0 {
                let free: Vec<f64> = distinct.iter().copied().filter(|d| !centroids.contains(d)).collect();
                if !free.is_empty() {
                    centroids[j] = free[rng.gen_range(0..free.len())];
                }
            }
        }
        report.sse.push(sse_1d(&sorted, &centroids, &assign));
    }

    centroids.sort_by(f64::total_cmp);
    let before = centroids.len();
    centroids.dedup();
    if centroids.len() < before {
        warn!(
            "codebook {attribute}: merged {} duplicate centroids, k reduced to {}",
            before - centroids.len(),
            centroids.len()
        );
    }
    Ok((Codebook::new(attribute, centroids)?, report))
}

/// Color codebook with centroids in CIE Lab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorCodebook {
    pub k: usize,
    pub centroids: Vec<Lab>,
}

impl ColorCodebook {
    pub fn new(centroids: Vec<Lab>) -> Result<ColorCodebook> {
        if centroids.is_empty() || centroids.len() > COLOR_BINS {
            return Err(Error::validation(
                "color codebook",
                format!("expected 1..={COLOR_BINS} centroids, got {}", centroids.len()),
            ));
        }
        Ok(ColorCodebook {
            k: centroids.len(),
            centroids,
        })
    }

    pub fn encode_lab(&self, lab: &Lab) -> u16 {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = lab.distance_sq(c);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best as u16
    }

    pub fn encode(&self, color: Rgb) -> u16 {
        self.encode_lab(&color.to_lab())
    }

    pub fn decode_lab(&self, bin: u16) -> Result<Lab> {
        self.centroids
            .get(bin as usize)
            .copied()
            .ok_or_else(|| Error::OutOfRange(format!("color bin {bin} with k={}", self.k)))
    }

    pub fn decode(&self, bin: u16) -> Result<Rgb> {
        Ok(self.decode_lab(bin)?.to_rgb())
    }
}

/// k-means with k=64 in Lab space, farthest-point seeding from a seeded
/// first pick. Final centroids are snapped onto the Lab value of their
/// decoded sRGB color so every centroid lies inside the sRGB gamut.
pub fn fit_color_codebook(colors: &[Rgb], seed: u64) -> Result<(ColorCodebook, FitReport)> {
    if colors.is_empty() {
        return Err(Error::validation("color codebook", "no colors to fit"));
    }
    let mut counts: BTreeMap<Rgb, usize> = BTreeMap::new();
    for c in colors {
        *counts.entry(*c).or_default() += 1;
    }
    let points: Vec<(Lab, f64)> = counts.iter().map(|(c, &n)| (c.to_lab(), n as f64)).collect();
    if points.len() <= COLOR_BINS {
        let report = FitReport {
            iterations: 0,
            converged: true,
            sse: vec![0.0],
        };
        return Ok((ColorCodebook::new(points.iter().map(|p| p.0).collect())?, report));
    }

    let k = COLOR_BINS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].0];
    let mut min_dist: Vec<f64> = points.iter().map(|p| p.0.distance_sq(&centroids[0])).collect();
    while centroids.len() < k {
        let mut far = 0;
        for (i, d) in min_dist.iter().enumerate() {
            if *d > min_dist[far] {
                far = i;
            }
        }
        let c = points[far].0;
        centroids.push(c);
        for (d, p) in min_dist.iter_mut().zip(&points) {
            *d = d.min(p.0.distance_sq(&c));
        }
    }

    let nearest = |centroids: &[Lab], p: &Lab| {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = p.distance_sq(c);
            if d < best_dist {
                best = j;
                best_dist = d;
            }
        }
        best
    };
    let mut assign = vec![usize::MAX; points.len()];
    let mut report = FitReport {
        iterations: 0,
        converged: false,
        sse: Vec::new(),
    };
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            let best = nearest(&centroids, &p.0);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let mut sums = vec![[0.0; 3]; k];
        let mut weights = vec![0.0; k];
        for ((lab, w), &a) in points.iter().zip(&assign) {
            sums[a][0] += w * lab.l;
            sums[a][1] += w * lab.a;
            sums[a][2] += w * lab.b;
            weights[a] += w;
        }
        for j in 0..k {
            if weights[j] > 0.0 {
                centroids[j] = Lab::new(sums[j][0] / weights[j], sums[j][1] / weights[j], sums[j][2] / weights[j]);
            }
        }
        let sse = points
            .iter()
            .zip(&assign)
            .map(|((lab, w), &a)| w * lab.distance_sq(&centroids[a]))
            .sum();
        report.sse.push(sse);
    }

    let mut snapped: Vec<Lab> = Vec::with_capacity(k);
    for c in &centroids {
        let lab = c.to_rgb().to_lab();
        if snapped.iter().any(|s| s.distance_sq(&lab) == 0.0) {
            warn!("color codebook: merged duplicate centroid");
        } else {
            snapped.push(lab);
        }
    }
    Ok((ColorCodebook::new(snapped)?, report))
}

/// Every codebook needed to discretize context and typography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub codebooks: BTreeMap<String, Codebook>,
    pub color: ColorCodebook,
}

/// Names of the one-dimensional codebooks a complete set carries.
pub fn codebook_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = ContextAttribute::ALL.iter().map(|c| c.name()).collect();
    names.extend(Attribute::GEOMETRIC.iter().map(|a| a.name()));
    names
}

impl CodebookSet {
    /// Fits every codebook on a corpus. Documents must carry labels.
    pub fn fit(docs: &[DesignDocument], seed: u64) -> Result<CodebookSet> {
        let mut ctx: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        let mut geo: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
        let mut colors = Vec::new();
        for doc in docs {
            let v = context_values(doc);
            ctx.entry(ContextAttribute::Aspect.name()).or_default().push(v.aspect);
            ctx.entry(ContextAttribute::NumText.name()).or_default().push(v.num_text);
            for e in &v.elements {
                for (attr, value) in ContextAttribute::ALL[2..].iter().zip(e) {
                    ctx.entry(attr.name()).or_default().push(*value);
                }
            }
            let labels = doc.labels.as_ref().ok_or_else(|| {
                Error::validation(format!("document {}", doc.id), "codebook fitting needs labelled documents")
            })?;
            for l in labels {
                geo.entry(Attribute::FontSize.name()).or_default().push(l.raw.font_size);
                geo.entry(Attribute::Angle.name()).or_default().push(l.raw.angle);
                geo.entry(Attribute::LetterSpacing.name()).or_default().push(l.raw.letter_spacing);
                geo.entry(Attribute::LineSpacing.name()).or_default().push(l.raw.line_spacing);
                colors.push(l.raw.color);
            }
        }
        if docs.is_empty() {
            return Err(Error::validation("codebook fitting", "empty corpus"));
        }
        let mut codebooks = BTreeMap::new();
        for c in ContextAttribute::ALL {
            let (cb, _) = fit_kmeans_1d(c.name(), &ctx[c.name()], c.cardinality(), seed)?;
            codebooks.insert(c.name().to_string(), cb);
        }
        for a in Attribute::GEOMETRIC {
            let (cb, _) = fit_kmeans_1d(a.name(), &geo[a.name()], a.cardinality(), seed)?;
            codebooks.insert(a.name().to_string(), cb);
        }
        let (color, _) = fit_color_codebook(&colors, seed)?;
        Ok(CodebookSet { codebooks, color })
    }

    pub fn get(&self, name: &str) -> Result<&Codebook> {
        self.codebooks
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing codebook `{name}`")))
    }

    pub fn context(&self, attr: ContextAttribute) -> Result<&Codebook> {
        self.get(attr.name())
    }

    /// Number of usable bins of an output attribute; never above the head size.
    pub fn label_count(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Color => self.color.k,
            a if a.is_geometric() => self.codebooks.get(a.name()).map_or(a.cardinality(), |c| c.k),
            a => a.cardinality(),
        }
    }

    pub fn encode_raw(&self, raw: &RawTypography) -> Result<TypographicAttributes> {
        Ok(TypographicAttributes {
            font: raw.font,
            color: self.color.encode(raw.color),
            alignment: raw.alignment.bin(),
            capitalization: raw.capitalization as u16,
            font_size: self.get(Attribute::FontSize.name())?.encode(raw.font_size),
            angle: self.get(Attribute::Angle.name())?.encode(raw.angle),
            letter_spacing: self.get(Attribute::LetterSpacing.name())?.encode(raw.letter_spacing),
            line_spacing: self.get(Attribute::LineSpacing.name())?.encode(raw.line_spacing),
        })
    }

    /// Decodes bins into centroid values.
    pub fn decode_attributes(&self, bins: &TypographicAttributes) -> Result<RawTypography> {
        let font = bins.font;
        if font as usize >= Attribute::Font.cardinality() {
            return Err(Error::OutOfRange(format!("font bin {font}")));
        }
        let capitalization = match bins.capitalization {
            0 => false,
            1 => true,
            b => return Err(Error::OutOfRange(format!("capitalization bin {b}"))),
        };
        Ok(RawTypography {
            font,
            color: self.color.decode(bins.color)?,
            alignment: Alignment::from_bin(bins.alignment)
                .ok_or_else(|| Error::OutOfRange(format!("alignment bin {}", bins.alignment)))?,
            capitalization,
            font_size: self.get(Attribute::FontSize.name())?.decode(bins.font_size)?,
            angle: self.get(Attribute::Angle.name())?.decode(bins.angle)?,
            letter_spacing: self.get(Attribute::LetterSpacing.name())?.decode(bins.letter_spacing)?,
            line_spacing: self.get(Attribute::LineSpacing.name())?.decode(bins.line_spacing)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for name in codebook_names() {
            let cb = self.get(name)?;
            let limit = ContextAttribute::ALL
                .iter()
                .find(|c| c.name() == name)
                .map(|c| c.cardinality())
                .or_else(|| Attribute::from_name(name).map(|a| a.cardinality()))
                .unwrap_or(usize::MAX);
            if cb.k != cb.centroids.len() || cb.k == 0 || cb.k > limit {
                return Err(Error::validation(format!("codebook {name}"), format!("invalid k={}", cb.k)));
            }
            Codebook::new(name, cb.centroids.clone())?;
        }
        if self.color.k != self.color.centroids.len() {
            return Err(Error::validation("color codebook", "k does not match centroid count"));
        }
        ColorCodebook::new(self.color.centroids.clone())?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("codebooks serialize");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<CodebookSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: CodebookSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }
}

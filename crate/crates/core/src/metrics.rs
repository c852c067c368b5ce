//! Evaluation: attribute accuracy and MAE, CIEDE2000 color difference,
//! structure score, diversity score and the Mode baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::color::Lab;
use crate::doc_model::{Attribute, DesignDocument, RawTypography, TypographicAttributes};
use crate::error::{Error, Result};
use crate::quantizer::CodebookSet;

/// Attributes scored by classification accuracy.
pub const ACCURACY_ATTRIBUTES: [Attribute; 3] = [Attribute::Font, Attribute::Alignment, Attribute::Capitalization];

pub fn mae_unit(attr: Attribute) -> &'static str {
    match attr {
        Attribute::FontSize | Attribute::LetterSpacing => "pt",
        Attribute::Angle => "deg",
        Attribute::LineSpacing => "relative",
        _ => "",
    }
}

fn geometric_value(raw: &RawTypography, attr: Attribute) -> f64 {
    match attr {
        Attribute::FontSize => raw.font_size,
        Attribute::Angle => raw.angle,
        Attribute::LetterSpacing => raw.letter_spacing,
        Attribute::LineSpacing => raw.line_spacing,
        _ => unreachable!("{attr} is not geometric"),
    }
}

/// CIEDE2000 color difference with unit weighting factors.
pub fn ciede2000(lab1: &Lab, lab2: &Lab) -> f64 {
    use std::f64::consts::PI;
    let deg = |r: f64| r * 180.0 / PI;
    let rad = |d: f64| d * PI / 180.0;
    let pow7 = |x: f64| x.powi(7);

    let c1 = lab1.a.hypot(lab1.b);
    let c2 = lab2.a.hypot(lab2.b);
    let c_bar = (c1 + c2) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt());
    let a1p = (1.0 + g) * lab1.a;
    let a2p = (1.0 + g) * lab2.a;
    let c1p = a1p.hypot(lab1.b);
    let c2p = a2p.hypot(lab2.b);
    let hue = |b: f64, ap: f64| {
        if b == 0.0 && ap == 0.0 {
            0.0
        } else {
            let h = deg(b.atan2(ap));
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hue(lab1.b, a1p);
    let h2p = hue(lab2.b, a2p);

    let dl = lab2.l - lab1.l;
    let dc = c2p - c1p;
    let dh_angle = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * (c1p * c2p).sqrt() * rad(dh_angle / 2.0).sin();

    let l_bar = (lab1.l + lab2.l) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let hp_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * rad(hp_bar - 30.0).cos() + 0.24 * rad(2.0 * hp_bar).cos() + 0.32 * rad(3.0 * hp_bar + 6.0).cos()
        - 0.20 * rad(4.0 * hp_bar - 63.0).cos();
    let d_theta = 30.0 * (-((hp_bar - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + pow7(25.0))).sqrt();
    let sl = 1.0 + 0.015 * (l_bar - 50.0).powi(2) / (20.0 + (l_bar - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cp_bar;
    let sh = 1.0 + 0.015 * cp_bar * t;
    let rt = -rad(2.0 * d_theta).sin() * rc;

    let (fl, fc, fh) = (dl / sl, dc / sc, dh / sh);
    (fl * fl + fc * fc + fh * fh + rt * fc * fh).max(0.0).sqrt()
}

/// Percentage of unordered pairs whose equality indicator agrees; `None`
/// when there are fewer than two elements.
pub fn structure_score(pred: &[u16], truth: &[u16]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::validation(
            "structure_score",
            format!("{} predicted vs {} true labels", pred.len(), truth.len()),
        ));
    }
    let n = pred.len();
    if n < 2 {
        return Ok(None);
    }
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            if (pred[i] == pred[j]) == (truth[i] == truth[j]) {
                agree += 1;
            }
        }
    }
    Ok(Some(100.0 * agree as f64 / pairs as f64))
}

/// `(1/T) sum_t N_uniq^t / N` as a percentage; `samples[n][t]` is a label.
pub fn diversity_score(samples: &[Vec<u16>]) -> Result<f64> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::validation("diversity_score", "no samples"));
    }
    let t_count = samples[0].len();
    if t_count == 0 || samples.iter().any(|s| s.len() != t_count) {
        return Err(Error::validation("diversity_score", "samples must share a positive element count"));
    }
    let total: f64 = (0..t_count)
        .map(|t| samples.iter().map(|s| s[t]).collect::<BTreeSet<_>>().len() as f64 / n as f64)
        .sum();
    Ok(100.0 * total / t_count as f64)
}

/// Per-document attribute metrics of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMetrics {
    /// Percent correct for font, alignment and capitalization.
    pub accuracy: BTreeMap<Attribute, f64>,
    /// Mean absolute error of the geometric attributes in their units.
    pub mae: BTreeMap<Attribute, f64>,
    /// Mean CIEDE2000 between predicted and true colors.
    pub color_diff: f64,
}

/// Compares predicted bins against the true bins and true values.
/// Geometric predictions and colors are decoded to centroids first.
pub fn attribute_metrics(
    pred: &[TypographicAttributes],
    truth_bins: &[TypographicAttributes],
    truth_values: &[RawTypography],
    codebooks: &CodebookSet,
) -> Result<DocumentMetrics> {
    let t = pred.len();
    if t == 0 || truth_bins.len() != t || truth_values.len() != t {
        return Err(Error::validation(
            "attribute_metrics",
            format!(
                "{} predictions vs {} true bins and {} true values",
                t,
                truth_bins.len(),
                truth_values.len()
            ),
        ));
    }
    let decoded = pred
        .iter()
        .map(|p| codebooks.decode_attributes(p))
        .collect::<Result<Vec<_>>>()?;
    let accuracy = ACCURACY_ATTRIBUTES
        .iter()
        .map(|&a| {
            let hits = pred.iter().zip(truth_bins).filter(|(p, y)| p.get(a) == y.get(a)).count();
            (a, 100.0 * hits as f64 / t as f64)
        })
        .collect();
    let mae = Attribute::GEOMETRIC
        .iter()
        .map(|&a| {
            let sum: f64 = decoded
                .iter()
                .zip(truth_values)
                .map(|(p, y)| (geometric_value(p, a) - geometric_value(y, a)).abs())
                .sum();
            (a, sum / t as f64)
        })
        .collect();
    let color_diff = decoded
        .iter()
        .zip(truth_values)
        .map(|(p, y)| ciede2000(&p.color.to_lab(), &y.color.to_lab()))
        .sum::<f64>()
        / t as f64;
    Ok(DocumentMetrics {
        accuracy,
        mae,
        color_diff,
    })
}

/// Which values stand on the truth side of MAE and color difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthBasis {
    /// Unquantized values from the corpus.
    Raw,
    /// Centroids of the true bins.
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeEntry {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub samples_per_document: usize,
    pub accuracy: BTreeMap<Attribute, f64>,
    pub mae: BTreeMap<Attribute, MaeEntry>,
    pub color_diff: f64,
    /// What the color difference and MAE compare against.
    pub truth_basis: TruthBasis,
    /// `None` when no document had two or more elements.
    pub structure: BTreeMap<Attribute, Option<f64>>,
    pub structure_documents: usize,
    pub structure_excluded: usize,
    /// Present when more than one sample per document was scored.
    pub diversity: Option<BTreeMap<Attribute, f64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table: attribute metrics, then structure and
    /// diversity per attribute.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(
            out,
            "documents: {}  samples/document: {}  structure: {} scored, {} excluded (T<2)  truth: {}",
            self.documents,
            self.samples_per_document,
            self.structure_documents,
            self.structure_excluded,
            match self.truth_basis {
                TruthBasis::Raw => "raw",
                TruthBasis::Decoded => "decoded",
            }
        );
        let _ = writeln!(out, "{:<16} {:>16} {:>10} {:>10}", "attribute", "metric", "structure", "diversity");
        for attr in Attribute::ALL {
            let metric = if let Some(acc) = self.accuracy.get(&attr) {
                format!("{acc:.1}%")
            } else if let Some(m) = self.mae.get(&attr) {
                format!("{:.3} {}", m.value, m.unit)
            } else {
                format!("{:.2} dE", self.color_diff)
            };
            let structure = fmt_opt(self.structure.get(&attr).copied().flatten());
            let diversity = fmt_opt(self.diversity.as_ref().and_then(|d| d.get(&attr).copied()));
            let _ = writeln!(out, "{:<16} {:>16} {:>10} {:>10}", attr.name(), metric, structure, diversity);
        }
        out
    }
}

/// Accumulates per-document metrics; samples within a document are
/// averaged first, then documents are averaged.
#[derive(Debug, Clone)]
pub struct Evaluator<'c> {
    codebooks: &'c CodebookSet,
    basis: TruthBasis,
    documents: usize,
    samples: Option<usize>,
    accuracy: BTreeMap<Attribute, f64>,
    mae: BTreeMap<Attribute, f64>,
    color: f64,
    structure: BTreeMap<Attribute, f64>,
    structure_docs: usize,
    structure_excluded: usize,
    diversity: BTreeMap<Attribute, f64>,
}

impl<'c> Evaluator<'c> {
    pub fn new(codebooks: &'c CodebookSet, basis: TruthBasis) -> Self {
        Evaluator {
            codebooks,
            basis,
            documents: 0,
            samples: None,
            accuracy: BTreeMap::new(),
            mae: BTreeMap::new(),
            color: 0.0,
            structure: BTreeMap::new(),
            structure_docs: 0,
            structure_excluded: 0,
            diversity: BTreeMap::new(),
        }
    }

    /// Scores `predictions` (one label list per sample) against a
    /// labelled document.
    pub fn add(&mut self, doc: &DesignDocument, predictions: &[Vec<TypographicAttributes>]) -> Result<()> {
        let labels = doc
            .labels
            .as_ref()
            .ok_or_else(|| Error::validation(format!("document {}", doc.id), "evaluation needs labels"))?;
        if predictions.is_empty() {
            return Err(Error::validation(format!("document {}", doc.id), "no predictions"));
        }
        match self.samples {
            Some(n) if n != predictions.len() => {
                return Err(Error::validation(
                    format!("document {}", doc.id),
                    format!("{} samples, earlier documents had {n}", predictions.len()),
                ))
            }
            _ => self.samples = Some(predictions.len()),
        }
        let truth_bins: Vec<TypographicAttributes> = labels.iter().map(|l| l.bins).collect();
        let truth_values: Vec<RawTypography> = match self.basis {
            TruthBasis::Raw => labels.iter().map(|l| l.raw).collect(),
            TruthBasis::Decoded => truth_bins
                .iter()
                .map(|b| self.codebooks.decode_attributes(b))
                .collect::<Result<_>>()?,
        };
        let n = predictions.len() as f64;
        let scored_structure = doc.len() >= 2;
        for pred in predictions {
            let m = attribute_metrics(pred, &truth_bins, &truth_values, self.codebooks)?;
            for (a, v) in m.accuracy {
                *self.accuracy.entry(a).or_default() += v / n;
            }
            for (a, v) in m.mae {
                *self.mae.entry(a).or_default() += v / n;
            }
            self.color += m.color_diff / n;
            if scored_structure {
                for attr in Attribute::ALL {
                    let p: Vec<u16> = pred.iter().map(|l| l.get(attr)).collect();
                    let y: Vec<u16> = truth_bins.iter().map(|l| l.get(attr)).collect();
                    let s = structure_score(&p, &y)?.expect("two or more elements");
                    *self.structure.entry(attr).or_default() += s / n;
                }
            }
        }
        if scored_structure {
            self.structure_docs += 1;
        } else {
            self.structure_excluded += 1;
        }
        for attr in Attribute::ALL {
            let columns: Vec<Vec<u16>> = predictions.iter().map(|p| p.iter().map(|l| l.get(attr)).collect()).collect();
            *self.diversity.entry(attr).or_default() += diversity_score(&columns)?;
        }
        self.documents += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<EvalReport> {
        if self.documents == 0 {
            return Err(Error::validation("evaluation", "no documents"));
        }
        let d = self.documents as f64;
        let samples = self.samples.unwrap_or(1);
        Ok(EvalReport {
            documents: self.documents,
            samples_per_document: samples,
            accuracy: self.accuracy.into_iter().map(|(a, v)| (a, v / d)).collect(),
            mae: self
                .mae
                .into_iter()
                .map(|(a, v)| {
                    (
                        a,
                        MaeEntry {
                            value: v / d,
                            unit: mae_unit(a).to_string(),
                        },
                    )
                })
                .collect(),
            color_diff: self.color / d,
            truth_basis: self.basis,
            structure: Attribute::ALL
                .iter()
                .map(|&a| {
                    let v = (self.structure_docs > 0).then(|| self.structure.get(&a).copied().unwrap_or(0.0) / self.structure_docs as f64);
                    (a, v)
                })
                .collect(),
            structure_documents: self.structure_docs,
            structure_excluded: self.structure_excluded,
            diversity: (samples > 1).then(|| self.diversity.into_iter().map(|(a, v)| (a, v / d)).collect()),
        })
    }
}

/// Constant predictor emitting the most frequent training bin of each
/// attribute (ties to the lowest bin).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeBaseline {
    pub labels: TypographicAttributes,
}

impl ModeBaseline {
    pub fn fit<'a>(labels: impl IntoIterator<Item = &'a TypographicAttributes>) -> Result<ModeBaseline> {
        let mut counts: Vec<BTreeMap<u16, usize>> = vec![BTreeMap::new(); 8];
        let mut seen = false;
        for l in labels {
            seen = true;
            for attr in Attribute::ALL {
                *counts[attr.index()].entry(l.get(attr)).or_default() += 1;
            }
        }
        if !seen {
            return Err(Error::validation("mode baseline", "no training labels"));
        }
        let mut bins = [0u16; 8];
        for attr in Attribute::ALL {
            let mut best: Option<(u16, usize)> = None;
            for (&bin, &c) in &counts[attr.index()] {
                if best.map_or(true, |(_, bc)| c > bc) {
                    best = Some((bin, c));
                }
            }
            bins[attr.index()] = best.expect("non-empty").0;
        }
        Ok(ModeBaseline {
            labels: TypographicAttributes::from_array(bins),
        })
    }

    pub fn fit_documents(docs: &[DesignDocument]) -> Result<ModeBaseline> {
        Self::fit(docs.iter().filter_map(|d| d.labels.as_ref()).flatten().map(|l| &l.bins))
    }

    pub fn predict(&self, doc: &DesignDocument) -> Vec<TypographicAttributes> {
        vec![self.labels; doc.len()]
    }
}

/// One row of a diversity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: String,
    pub p: f64,
    pub attribute: Attribute,
    /// Accuracy (%), MAE or CIEDE2000 depending on the attribute.
    pub attribute_metric: f64,
    pub structure: Option<f64>,
    pub diversity: Option<f64>,
}

impl SweepRow {
    pub fn from_report(mode: &str, p: f64, attribute: Attribute, report: &EvalReport) -> SweepRow {
        let attribute_metric = report
            .accuracy
            .get(&attribute)
            .copied()
            .or_else(|| report.mae.get(&attribute).map(|m| m.value))
            .unwrap_or(report.color_diff);
        SweepRow {
            mode: mode.to_string(),
            p,
            attribute,
            attribute_metric,
            structure: report.structure.get(&attribute).copied().flatten(),
            diversity: report.diversity.as_ref().and_then(|d| d.get(&attribute).copied()),
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut out = String::from("mode,p,attribute,attribute_metric,structure,diversity\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{}",
            r.mode,
            r.p,
            r.attribute.name(),
            r.attribute_metric,
            opt(r.structure),
            opt(r.diversity)
        );
    }
    out
}

//! Context featurization: background statistics and text statistics.
//!
//! The extractor is a trait so a learned encoder can replace the
//! deterministic default without touching the model, which only relies on
//! the per-modality vector lengths.

use serde::{Deserialize, Serialize};

use crate::doc_model::{DesignDocument, Raster, TextElement};
use crate::error::{Error, Result};

pub const IMAGE_DIM: usize = 55;
pub const TEXT_DIM: usize = 38;
const GRID: usize = 4;
const TRIGRAM_BUCKETS: usize = 32;
const DEFAULT_EXTENT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    CanvasImage,
    ElementImage,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: Modality,
}

pub trait FeatureExtractor: Send + Sync {
    fn canvas_image(&self, background: &Raster) -> Result<FeatureVector>;
    fn element_image(&self, background: &Raster, canvas: (f64, f64), elem: &TextElement) -> Result<FeatureVector>;
    fn text(&self, text: &str) -> Result<FeatureVector>;
}

/// Grid color statistics for images and character statistics for text.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatisticsExtractor;

/// Pixel rectangle `[x0, x1) x [y0, y1)` in raster coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelRect {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn image_stats(raster: &Raster, rect: PixelRect) -> Vec<f64> {
    let mut out = Vec::with_capacity(IMAGE_DIM);
    let (w, h) = (rect.x1 - rect.x0, rect.y1 - rect.y0);
    let span = |start: usize, len: usize, i: usize| {
        let a = start + i * len / GRID;
        let b = (start + (i + 1) * len / GRID).max(a + 1);
        (a.min(start + len - 1), b.min(start + len))
    };
    for gy in 0..GRID {
        let (ya, yb) = span(rect.y0, h, gy);
        for gx in 0..GRID {
            let (xa, xb) = span(rect.x0, w, gx);
            let mut sum = [0.0; 3];
            for y in ya..yb {
                for x in xa..xb {
                    let p = raster.pixel(x, y).0;
                    for c in 0..3 {
                        sum[c] += p[c] as f64;
                    }
                }
            }
            let n = ((yb - ya) * (xb - xa)) as f64 * 255.0;
            out.extend(sum.iter().map(|s| s / n));
        }
    }
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    let mut luma = 0.0;
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let p = raster.pixel(x, y);
            for c in 0..3 {
                let v = p.0[c] as f64 / 255.0;
                sum[c] += v;
                sum_sq[c] += v * v;
            }
            luma += p.luma();
        }
    }
    let n = (w * h) as f64;
    let means = sum.map(|s| s / n);
    out.extend(means);
    for c in 0..3 {
        out.push((sum_sq[c] / n - means[c] * means[c]).max(0.0).sqrt());
    }
    out.push(luma / n);
    out
}

/// Maps a canvas-space box onto raster pixels, clamped to the raster.
fn crop_rect(raster: &Raster, canvas: (f64, f64), cx: f64, cy: f64, bw: f64, bh: f64) -> Option<PixelRect> {
    let sx = raster.width() as f64 / canvas.0;
    let sy = raster.height() as f64 / canvas.1;
    let x0 = ((cx - bw / 2.0) * sx).floor().max(0.0);
    let x1 = ((cx + bw / 2.0) * sx).ceil().min(raster.width() as f64);
    let y0 = ((cy - bh / 2.0) * sy).floor().max(0.0);
    let y1 = ((cy + bh / 2.0) * sy).ceil().min(raster.height() as f64);
    if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
        return None;
    }
    Some(PixelRect {
        x0: x0 as usize,
        x1: x1 as usize,
        y0: y0 as usize,
        y1: y1 as usize,
    })
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// L1-normalized bag of hashed character trigrams over the case-folded
/// text padded with boundary markers.
pub fn trigram_bag(text: &str) -> Vec<f64> {
    let mut chars = vec!['\u{2}'];
    chars.extend(text.chars().flat_map(char::to_lowercase));
    chars.push('\u{3}');
    let mut bag = vec![0.0; TRIGRAM_BUCKETS];
    let mut buf = String::new();
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        bag[(fnv1a(buf.as_bytes()) % TRIGRAM_BUCKETS as u64) as usize] += 1.0;
    }
    let total: f64 = bag.iter().sum();
    bag.iter_mut().for_each(|v| *v /= total);
    bag
}

impl FeatureExtractor for StatisticsExtractor {
    fn canvas_image(&self, background: &Raster) -> Result<FeatureVector> {
        let rect = PixelRect {
            x0: 0,
            x1: background.width(),
            y0: 0,
            y1: background.height(),
        };
        Ok(FeatureVector {
            values: image_stats(background, rect),
            source: Modality::CanvasImage,
        })
    }

    fn element_image(&self, background: &Raster, canvas: (f64, f64), elem: &TextElement) -> Result<FeatureVector> {
        let default_w = canvas.0 * DEFAULT_EXTENT;
        let default_h = canvas.1 * DEFAULT_EXTENT;
        let (bw, bh) = (elem.box_width.unwrap_or(default_w), elem.box_height.unwrap_or(default_h));
        let rect = crop_rect(background, canvas, elem.center_x, elem.center_y, bw, bh)
            .or_else(|| crop_rect(background, canvas, elem.center_x, elem.center_y, default_w, default_h))
            .unwrap_or_else(|| {
                // a box smaller than one raster pixel: take the pixel under the center
                let x = ((elem.center_x / canvas.0 * background.width() as f64) as usize).min(background.width() - 1);
                let y = ((elem.center_y / canvas.1 * background.height() as f64) as usize).min(background.height() - 1);
                PixelRect {
                    x0: x,
                    x1: x + 1,
                    y0: y,
                    y1: y + 1,
                }
            });
        Ok(FeatureVector {
            values: image_stats(background, rect),
            source: Modality::ElementImage,
        })
    }

    fn text(&self, text: &str) -> Result<FeatureVector> {
        if text.is_empty() {
            return Err(Error::validation("text features", "empty text"));
        }
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len() as f64;
        let letters = chars.iter().filter(|c| c.is_alphabetic()).count();
        let upper = chars.iter().filter(|c| c.is_uppercase()).count();
        let ratio = |pred: fn(&char) -> bool| chars.iter().filter(|c| pred(c)).count() as f64 / n;
        let mut values = vec![
            n.ln_1p(),
            (1 + chars.iter().filter(|&&c| c == '\n').count()) as f64,
            if letters == 0 { 0.0 } else { upper as f64 / letters as f64 },
            ratio(|c| c.is_numeric()),
            ratio(|c| is_punctuation(*c)),
            ratio(|c| c.is_whitespace()),
        ];
        values.extend(trigram_bag(text));
        Ok(FeatureVector {
            values,
            source: Modality::Text,
        })
    }
}

/// Precomputed continuous features of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentFeatures {
    pub canvas_image: Vec<f64>,
    pub element_images: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
}

pub fn extract_document(extractor: &dyn FeatureExtractor, doc: &DesignDocument) -> Result<DocumentFeatures> {
    let canvas = (doc.canvas.width as f64, doc.canvas.height as f64);
    let bg = &doc.canvas.background;
    let mut element_images = Vec::with_capacity(doc.len());
    let mut texts = Vec::with_capacity(doc.len());
    for e in &doc.elements {
        element_images.push(extractor.element_image(bg, canvas, e)?.values);
        texts.push(extractor.text(&e.text)?.values);
    }
    Ok(DocumentFeatures {
        canvas_image: extractor.canvas_image(bg)?.values,
        element_images,
        texts,
    })
}

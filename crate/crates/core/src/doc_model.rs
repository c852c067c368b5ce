//! Design documents, context attributes and typographic attributes.
//!
//! A [`DesignDocument`] holds the canvas and its text elements (the
//! conditioning context) and, for training and evaluation, one
//! [`Label`] per element. Elements are always kept in raster-scan order.

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::quantizer::CodebookSet;

pub const MAX_ELEMENTS: usize = 50;

/// The eight typographic output attributes, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Font,
    Color,
    Alignment,
    Capitalization,
    FontSize,
    Angle,
    LetterSpacing,
    LineSpacing,
}

impl Attribute {
    pub const ALL: [Attribute; 8] = [
        Attribute::Font,
        Attribute::Color,
        Attribute::Alignment,
        Attribute::Capitalization,
        Attribute::FontSize,
        Attribute::Angle,
        Attribute::LetterSpacing,
        Attribute::LineSpacing,
    ];

    pub const GEOMETRIC: [Attribute; 4] = [
        Attribute::FontSize,
        Attribute::Angle,
        Attribute::LetterSpacing,
        Attribute::LineSpacing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of categories of the output head.
    pub fn cardinality(self) -> usize {
        match self {
            Attribute::Font => 261,
            Attribute::Color => 64,
            Attribute::Alignment => 3,
            Attribute::Capitalization => 2,
            Attribute::FontSize | Attribute::Angle | Attribute::LetterSpacing | Attribute::LineSpacing => 16,
        }
    }

    pub fn is_geometric(self) -> bool {
        Self::GEOMETRIC.contains(&self)
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Font => "font",
            Attribute::Color => "color",
            Attribute::Alignment => "alignment",
            Attribute::Capitalization => "capitalization",
            Attribute::FontSize => "font_size",
            Attribute::Angle => "angle",
            Attribute::LetterSpacing => "letter_spacing",
            Attribute::LineSpacing => "line_spacing",
        }
    }

    pub fn from_name(name: &str) -> Option<Attribute> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Discretized context attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextAttribute {
    Aspect,
    NumText,
    Left,
    Top,
    LineCount,
    CharCount,
}

impl ContextAttribute {
    pub const ALL: [ContextAttribute; 6] = [
        ContextAttribute::Aspect,
        ContextAttribute::NumText,
        ContextAttribute::Left,
        ContextAttribute::Top,
        ContextAttribute::LineCount,
        ContextAttribute::CharCount,
    ];

    pub fn cardinality(self) -> usize {
        match self {
            ContextAttribute::Aspect => 40,
            ContextAttribute::NumText | ContextAttribute::LineCount | ContextAttribute::CharCount => 50,
            ContextAttribute::Left | ContextAttribute::Top => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ContextAttribute::Aspect => "aspect",
            ContextAttribute::NumText => "num_text",
            ContextAttribute::Left => "left",
            ContextAttribute::Top => "top",
            ContextAttribute::LineCount => "line_count",
            ContextAttribute::CharCount => "char_count",
        }
    }
}

/// Horizontal text alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Left,
    Center,
    Right,
}

impl Alignment {
    pub const ALL: [Alignment; 3] = [Alignment::Left, Alignment::Center, Alignment::Right];

    pub fn bin(self) -> u16 {
        self as u16
    }

    pub fn from_bin(bin: u16) -> Option<Alignment> {
        Self::ALL.get(bin as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Alignment::Left => "left",
            Alignment::Center => "center",
            Alignment::Right => "right",
        }
    }
}

/// 8-bit RGB raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Raster({}x{})", self.width, self.height)
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Raster> {
        if width == 0 || height == 0 {
            return Err(Error::validation("raster", "empty raster"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::validation(
                "raster",
                format!("expected {} bytes, got {}", width * height * 3, pixels.len()),
            ));
        }
        Ok(Raster { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Raster> {
        let pixels = color.0.iter().copied().cycle().take(width * height * 3).collect();
        Raster::new(width, height, pixels)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Raster> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y).0);
            }
        }
        Raster::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Raster> {
        let bad = |m: &str| Error::validation("ppm", m.to_string());
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad("only binary P6 is supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit PPM is supported"));
        }
        // single whitespace byte separates header from data
        pos += 1;
        let data = bytes.get(pos..pos + w * h * 3).ok_or_else(|| bad("truncated pixel data"))?;
        Raster::new(w, h, data.to_vec())
    }

    pub fn read_ppm(path: &Path) -> Result<Raster> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::from_ppm(&bytes)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    pub background: Arc<Raster>,
    /// Path as written in the corpus file, relative to that file.
    pub background_path: String,
    pub aspect_bin: u16,
    pub numtext_bin: u16,
}

impl CanvasSpec {
    pub fn aspect_ratio(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextElement {
    pub text: String,
    pub center_x: f64,
    pub center_y: f64,
    pub box_width: Option<f64>,
    pub box_height: Option<f64>,
    pub left_bin: u16,
    pub top_bin: u16,
    pub line_count_bin: u16,
    pub char_count_bin: u16,
}

impl TextElement {
    pub fn new(text: impl Into<String>, center_x: f64, center_y: f64) -> Self {
        TextElement {
            text: text.into(),
            center_x,
            center_y,
            box_width: None,
            box_height: None,
            left_bin: 0,
            top_bin: 0,
            line_count_bin: 0,
            char_count_bin: 0,
        }
    }

    pub fn with_box(mut self, width: f64, height: f64) -> Self {
        self.box_width = Some(width);
        self.box_height = Some(height);
        self
    }

    /// Top-left corner; missing extents count as zero.
    pub fn corner(&self) -> (f64, f64) {
        (
            self.center_x - self.box_width.unwrap_or(0.0) / 2.0,
            self.center_y - self.box_height.unwrap_or(0.0) / 2.0,
        )
    }

    pub fn line_count(&self) -> usize {
        1 + self.text.chars().filter(|&c| c == '\n').count()
    }

    pub fn char_count(&self) -> usize {
        self.text.chars().count()
    }
}

/// Bin ids of the eight typographic attributes of one element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TypographicAttributes {
    pub font: u16,
    pub color: u16,
    pub alignment: u16,
    pub capitalization: u16,
    pub font_size: u16,
    pub angle: u16,
    pub letter_spacing: u16,
    pub line_spacing: u16,
}

impl TypographicAttributes {
    pub fn from_array(bins: [u16; 8]) -> Self {
        let [font, color, alignment, capitalization, font_size, angle, letter_spacing, line_spacing] = bins;
        TypographicAttributes {
            font,
            color,
            alignment,
            capitalization,
            font_size,
            angle,
            letter_spacing,
            line_spacing,
        }
    }

    pub fn to_array(&self) -> [u16; 8] {
        [
            self.font,
            self.color,
            self.alignment,
            self.capitalization,
            self.font_size,
            self.angle,
            self.letter_spacing,
            self.line_spacing,
        ]
    }

    pub fn get(&self, attr: Attribute) -> u16 {
        self.to_array()[attr.index()]
    }

    pub fn set(&mut self, attr: Attribute, bin: u16) {
        let mut bins = self.to_array();
        bins[attr.index()] = bin;
        *self = Self::from_array(bins);
    }

    pub fn validate(&self) -> Result<()> {
        for attr in Attribute::ALL {
            let bin = self.get(attr);
            if bin as usize >= attr.cardinality() {
                return Err(Error::validation(
                    "typographic attributes",
                    format!("{attr} bin {bin} >= {}", attr.cardinality()),
                ));
            }
        }
        Ok(())
    }
}

/// Raw typographic values in their natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawTypography {
    pub font: u16,
    pub color: Rgb,
    pub alignment: Alignment,
    pub capitalization: bool,
    /// Points.
    pub font_size: f64,
    /// Degrees.
    pub angle: f64,
    /// Points.
    pub letter_spacing: f64,
    /// Relative scale, 1.0 is single spacing.
    pub line_spacing: f64,
}

/// Ground-truth label of one element: encoded bins next to the raw values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub bins: TypographicAttributes,
    pub raw: RawTypography,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignDocument {
    pub id: String,
    pub canvas: CanvasSpec,
    pub elements: Vec<TextElement>,
    pub labels: Option<Vec<Label>>,
}

impl DesignDocument {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn label_bins(&self) -> Option<Vec<TypographicAttributes>> {
        self.labels.as_ref().map(|ls| ls.iter().map(|l| l.bins).collect())
    }

    /// Stable sort into raster-scan order: top edge, then left edge, then
    /// original position.
    pub fn sort_raster(&mut self) {
        let n = self.elements.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| raster_cmp(&self.elements[i], i, &self.elements[j], j));
        let elements = order.iter().map(|&i| self.elements[i].clone()).collect();
        self.elements = elements;
        if let Some(labels) = &self.labels {
            self.labels = Some(order.iter().map(|&i| labels[i]).collect());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("document {}", self.id);
        let t = self.elements.len();
        if t == 0 || t > MAX_ELEMENTS {
            return Err(Error::validation(ctx, format!("element count {t} outside 1..={MAX_ELEMENTS}")));
        }
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(Error::validation(ctx, "canvas width and height must be positive"));
        }
        let (w, h) = (self.canvas.width as f64, self.canvas.height as f64);
        for (i, e) in self.elements.iter().enumerate() {
            if e.text.is_empty() {
                return Err(Error::validation(&ctx, format!("element {i} has empty text")));
            }
            if !(0.0..=w).contains(&e.center_x) || !(0.0..=h).contains(&e.center_y) {
                return Err(Error::validation(
                    &ctx,
                    format!("element {i} center ({}, {}) outside canvas", e.center_x, e.center_y),
                ));
            }
            for extent in [e.box_width, e.box_height].into_iter().flatten() {
                if !extent.is_finite() || extent < 0.0 {
                    return Err(Error::validation(&ctx, format!("element {i} has invalid box extent {extent}")));
                }
            }
        }
        for i in 1..t {
            if raster_cmp(&self.elements[i - 1], i - 1, &self.elements[i], i) == Ordering::Greater {
                return Err(Error::validation(&ctx, "elements not in raster order"));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != t {
                return Err(Error::validation(&ctx, format!("{} labels for {t} elements", labels.len())));
            }
            for l in labels {
                l.bins.validate()?;
            }
        }
        Ok(())
    }
}

fn raster_cmp(a: &TextElement, ai: usize, b: &TextElement, bi: usize) -> Ordering {
    let (ax, ay) = a.corner();
    let (bx, by) = b.corner();
    ay.total_cmp(&by).then(ax.total_cmp(&bx)).then(ai.cmp(&bi))
}

/// Raw values of the discretized context attributes of a document.
pub struct ContextValues {
    pub aspect: f64,
    pub num_text: f64,
    /// Per element: (left, top, line count, char count).
    pub elements: Vec<[f64; 4]>,
}

pub fn context_values(doc: &DesignDocument) -> ContextValues {
    let (w, h) = (doc.canvas.width as f64, doc.canvas.height as f64);
    ContextValues {
        aspect: doc.canvas.aspect_ratio(),
        num_text: doc.elements.len() as f64,
        elements: doc
            .elements
            .iter()
            .map(|e| {
                let (x, y) = e.corner();
                [x / w, y / h, e.line_count() as f64, e.char_count() as f64]
            })
            .collect(),
    }
}

/// Populates every context bin from the fitted codebooks. Idempotent.
pub fn derive_context_bins(mut doc: DesignDocument, codebooks: &CodebookSet) -> Result<DesignDocument> {
    let values = context_values(&doc);
    doc.canvas.aspect_bin = codebooks.context(ContextAttribute::Aspect)?.encode(values.aspect);
    doc.canvas.numtext_bin = codebooks.context(ContextAttribute::NumText)?.encode(values.num_text);
    let left = codebooks.context(ContextAttribute::Left)?;
    let top = codebooks.context(ContextAttribute::Top)?;
    let lines = codebooks.context(ContextAttribute::LineCount)?;
    let chars = codebooks.context(ContextAttribute::CharCount)?;
    for (e, v) in doc.elements.iter_mut().zip(&values.elements) {
        e.left_bin = left.encode(v[0]);
        e.top_bin = top.encode(v[1]);
        e.line_count_bin = lines.encode(v[2]);
        e.char_count_bin = chars.encode(v[3]);
    }
    Ok(doc)
}

/// Re-encodes label bins from the raw label values.
pub fn encode_labels(mut doc: DesignDocument, codebooks: &CodebookSet) -> Result<DesignDocument> {
    if let Some(labels) = doc.labels.as_mut() {
        for label in labels.iter_mut() {
            label.bins = codebooks.encode_raw(&label.raw)?;
        }
    }
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Corpus file (JSON Lines)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub id: String,
    pub canvas: CanvasRecord,
    pub elements: Vec<ElementRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanvasRecord {
    pub width: u32,
    pub height: u32,
    pub background_path: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementRecord {
    pub text: String,
    pub center_x: f64,
    pub center_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_rgb: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Alignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capitalization: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub letter_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_spacing: Option<f64>,
}

impl ElementRecord {
    fn raw_label(&self, id: &str, index: usize) -> Result<Option<RawTypography>> {
        let present = [
            self.font.is_some(),
            self.color_rgb.is_some(),
            self.alignment.is_some(),
            self.capitalization.is_some(),
            self.font_size.is_some(),
            self.angle.is_some(),
            self.letter_spacing.is_some(),
            self.line_spacing.is_some(),
        ];
        if present.iter().all(|p| !p) {
            return Ok(None);
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Parse {
                record: id.to_string(),
                field: format!("elements[{index}].{}", Attribute::ALL[missing].name()),
                message: "typographic attributes must be all present or all absent".into(),
            });
        }
        let raw = RawTypography {
            font: self.font.unwrap(),
            color: Rgb(self.color_rgb.unwrap()),
            alignment: self.alignment.unwrap(),
            capitalization: self.capitalization.unwrap(),
            font_size: self.font_size.unwrap(),
            angle: self.angle.unwrap(),
            letter_spacing: self.letter_spacing.unwrap(),
            line_spacing: self.line_spacing.unwrap(),
        };
        if raw.font as usize >= Attribute::Font.cardinality() {
            return Err(Error::validation(
                format!("record {id} elements[{index}].font"),
                format!("font id {} >= {}", raw.font, Attribute::Font.cardinality()),
            ));
        }
        for (name, v) in [
            ("font_size", raw.font_size),
            ("angle", raw.angle),
            ("letter_spacing", raw.letter_spacing),
            ("line_spacing", raw.line_spacing),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(format!("record {id} elements[{index}].{name}"), "not finite"));
            }
        }
        Ok(Some(raw))
    }

    fn with_raw(mut self, raw: &RawTypography) -> Self {
        self.font = Some(raw.font);
        self.color_rgb = Some(raw.color.0);
        self.alignment = Some(raw.alignment);
        self.capitalization = Some(raw.capitalization);
        self.font_size = Some(raw.font_size);
        self.angle = Some(raw.angle);
        self.letter_spacing = Some(raw.letter_spacing);
        self.line_spacing = Some(raw.line_spacing);
        self
    }
}

impl DocumentRecord {
    /// Builds a document with zeroed bins, elements in raster order.
    pub fn into_document(self, background: Arc<Raster>) -> Result<DesignDocument> {
        let id = self.id.clone();
        let mut labels = Vec::with_capacity(self.elements.len());
        let mut elements = Vec::with_capacity(self.elements.len());
        for (i, rec) in self.elements.iter().enumerate() {
            for (name, v) in [("center_x", rec.center_x), ("center_y", rec.center_y)] {
                if !v.is_finite() {
                    return Err(Error::validation(format!("record {id} elements[{i}].{name}"), "not finite"));
                }
            }
            labels.push(rec.raw_label(&id, i)?);
            elements.push(TextElement {
                text: rec.text.clone(),
                center_x: rec.center_x,
                center_y: rec.center_y,
                box_width: rec.box_width,
                box_height: rec.box_height,
                left_bin: 0,
                top_bin: 0,
                line_count_bin: 0,
                char_count_bin: 0,
            });
        }
        let labels = if labels.iter().all(Option::is_none) {
            None
        } else if labels.iter().all(Option::is_some) {
            Some(
                labels
                    .into_iter()
                    .map(|raw| Label {
                        bins: TypographicAttributes::default(),
                        raw: raw.unwrap(),
                    })
                    .collect(),
            )
        } else {
            return Err(Error::validation(
                format!("record {id}"),
                "labels must be present on all elements or none",
            ));
        };
        let mut doc = DesignDocument {
            id,
            canvas: CanvasSpec {
                width: self.canvas.width,
                height: self.canvas.height,
                background,
                background_path: self.canvas.background_path,
                aspect_bin: 0,
                numtext_bin: 0,
            },
            elements,
            labels,
        };
        doc.sort_raster();
        doc.validate()?;
        Ok(doc)
    }

    pub fn from_document(doc: &DesignDocument) -> DocumentRecord {
        DocumentRecord {
            id: doc.id.clone(),
            canvas: CanvasRecord {
                width: doc.canvas.width,
                height: doc.canvas.height,
                background_path: doc.canvas.background_path.clone(),
            },
            elements: doc
                .elements
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let rec = ElementRecord {
                        text: e.text.clone(),
                        center_x: e.center_x,
                        center_y: e.center_y,
                        box_width: e.box_width,
                        box_height: e.box_height,
                        ..Default::default()
                    };
                    match &doc.labels {
                        Some(labels) => rec.with_raw(&labels[i].raw),
                        None => rec,
                    }
                })
                .collect(),
        }
    }
}

/// Parses one JSONL line, naming the record id and field path on failure.
pub fn parse_record(line: &str, line_no: usize) -> Result<DocumentRecord> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        record: format!("line {line_no}"),
        field: "<json>".into(),
        message: e.to_string(),
    })?;
    let record_id = value
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| format!("line {line_no}"));
    serde_path_to_error::deserialize(value).map_err(|e| Error::Parse {
        record: record_id,
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn background_for(base: &Path, rel: &str) -> Result<Arc<Raster>> {
    let path = base.join(rel);
    Raster::read_ppm(&path).map(Arc::new)
}

/// Reads a corpus file without deriving any bins.
pub fn load_raw_documents(path: &Path) -> Result<Vec<DesignDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line, i + 1)?;
        let background = background_for(&base, &record.canvas.background_path)?;
        docs.push(record.into_document(background)?);
    }
    Ok(docs)
}

/// Reads a corpus file and populates all context and label bins.
pub fn load_documents(path: &Path, codebooks: &CodebookSet) -> Result<Vec<DesignDocument>> {
    load_raw_documents(path)?
        .into_iter()
        .map(|doc| encode_labels(derive_context_bins(doc, codebooks)?, codebooks))
        .collect()
}

pub fn write_documents(path: &Path, docs: &[DesignDocument]) -> Result<()> {
    let mut out = Vec::new();
    for doc in docs {
        serde_json::to_writer(&mut out, &DocumentRecord::from_document(doc))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

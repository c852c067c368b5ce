//! Wire types shared by the HTTP service and the CLI.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::Arc;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use typogen_core::color::Rgb;
use typogen_core::doc_model::{derive_context_bins, encode_labels, DocumentRecord, ElementRecord, Raster};
use typogen_core::metrics::TruthBasis;
use typogen_core::quantizer::CodebookSet;
use typogen_core::sampling::{Lock, SamplingMode, StructureClusters};
use typogen_core::{Attribute, DesignDocument, Error, TypographicAttributes};

/// Rasters are stored at 1/8 of the canvas resolution, never below 8 px.
const RASTER_SCALE: u32 = 8;

/// A document as the editor sends it: the background is either a hex
/// color or a `data:image/png;base64,` URI and defaults to white.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentPayload {
    #[serde(default = "default_id")]
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub background: Option<String>,
    pub elements: Vec<ElementRecord>,
}

fn default_id() -> String {
    "draft".into()
}

fn decode_background(spec: Option<&str>, width: u32, height: u32) -> Result<Raster, Error> {
    let (w, h) = (((width / RASTER_SCALE).max(8)) as usize, ((height / RASTER_SCALE).max(8)) as usize);
    let bad = |m: String| Error::validation("document.background", m);
    match spec {
        None => Raster::filled(w, h, Rgb([255, 255, 255])),
        Some(s) if s.starts_with('#') => {
            let c = Rgb::from_hex(s).ok_or_else(|| bad(format!("`{s}` is not a hex color")))?;
            Raster::filled(w, h, c)
        }
        Some(s) => {
            let b64 = s
                .strip_prefix("data:image/png;base64,")
                .ok_or_else(|| bad("expected `#rrggbb` or a base64 PNG data URI".into()))?;
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| bad(format!("invalid base64: {e}")))?;
            let img = image::load(Cursor::new(bytes), image::ImageFormat::Png)
                .map_err(|e| bad(format!("invalid PNG: {e}")))?
                .resize_exact(w as u32, h as u32, image::imageops::FilterType::Triangle)
                .to_rgb8();
            Raster::new(w, h, img.into_raw())
        }
    }
}

impl DocumentPayload {
    /// Validated document with context bins (and label bins, when the
    /// elements carry raw typography) derived from `codebooks`.
    pub fn into_document(self, codebooks: &CodebookSet) -> Result<DesignDocument, Error> {
        let raster = decode_background(self.background.as_deref(), self.width, self.height)?;
        let record = DocumentRecord {
            id: self.id,
            canvas: typogen_core::doc_model::CanvasRecord {
                width: self.width,
                height: self.height,
                background_path: String::new(),
            },
            elements: self.elements,
        };
        let doc = record.into_document(Arc::new(raster))?;
        encode_labels(derive_context_bins(doc, codebooks)?, codebooks)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub document: DocumentPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub doc_id: String,
    pub labels: Vec<TypographicAttributes>,
    pub clusters: StructureClusters,
}

fn default_n() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub document: DocumentPayload,
    /// Overrides of the configured nucleus mass, by attribute.
    #[serde(default)]
    pub p_k: BTreeMap<Attribute, f64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, deserialize_with = "mode_alias")]
    pub mode: Option<SamplingMode>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub locks: Vec<Lock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub doc_id: String,
    pub mode: SamplingMode,
    pub seed: u64,
    pub samples: Vec<Vec<TypographicAttributes>>,
    pub clusters: StructureClusters,
    pub svgs: Vec<String>,
}

/// One sample (`[[bins; 8]; T]`) or several.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Predictions {
    One(Vec<[u16; 8]>),
    Many(Vec<Vec<[u16; 8]>>),
}

impl Predictions {
    pub fn into_samples(self) -> Vec<Vec<TypographicAttributes>> {
        let conv = |s: Vec<[u16; 8]>| s.into_iter().map(TypographicAttributes::from_array).collect();
        match self {
            Predictions::One(s) => vec![conv(s)],
            Predictions::Many(m) => m.into_iter().map(conv).collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRequest {
    pub pred: Predictions,
    /// Labeled document; every element carries its raw typography.
    pub truth: DocumentPayload,
    #[serde(default)]
    pub basis: Option<TruthBasis>,
}

/// Accepts the short spelling `structure` as well as the canonical names.
pub fn parse_mode(s: &str) -> Option<SamplingMode> {
    match s {
        "structure" | "sp" => Some(SamplingMode::StructurePreserved),
        other => SamplingMode::from_name(other),
    }
}

fn mode_alias<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<SamplingMode>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| parse_mode(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown sampling mode `{s}`"))))
        .transpose()
}

/// A request body that failed to parse, with the JSON path of the culprit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, FieldError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| FieldError {
        field: match e.path().to_string() {
            p if p == "." => "<body>".into(),
            p => p,
        },
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| FieldError {
        field: "<body>".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

//! SVG rendering of a document with decoded typography.
//!
//! Every text element becomes a `<g>` carrying its eight decoded values as
//! `data-*` attributes, so a rendering can be parsed back into labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Cursor;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::doc_model::{Alignment, DesignDocument, RawTypography, TypographicAttributes};
use crate::error::{Error, Result};
use crate::quantizer::CodebookSet;

/// Advance of one glyph as a fraction of the font size.
pub const GLYPH_ADVANCE: f64 = 0.6;
pub const FAMILIES: [&str; 5] = ["serif", "sans-serif", "monospace", "cursive", "fantasy"];
const GROUP_CLASS: &str = "text-element";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "href")]
pub enum BackgroundMode {
    /// Inline base64 PNG.
    Embed,
    /// Link to an external file.
    Link(String),
    None,
}

#[derive(Debug, Clone)]
pub struct RenderSpec<'a> {
    pub doc: &'a DesignDocument,
    pub labels: &'a [TypographicAttributes],
    /// Font id to family; unmapped ids fall back to `FAMILIES[id % 5]`.
    pub font_map: BTreeMap<u16, String>,
    pub codebooks: &'a CodebookSet,
    pub background: BackgroundMode,
}

impl<'a> RenderSpec<'a> {
    pub fn new(doc: &'a DesignDocument, labels: &'a [TypographicAttributes], codebooks: &'a CodebookSet) -> Self {
        RenderSpec {
            doc,
            labels,
            font_map: BTreeMap::new(),
            codebooks,
            background: BackgroundMode::Embed,
        }
    }

    pub fn family(&self, font: u16) -> &str {
        self.font_map
            .get(&font)
            .map(String::as_str)
            .unwrap_or(FAMILIES[font as usize % FAMILIES.len()])
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            // characters XML 1.0 cannot carry
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => out.push('\u{fffd}'),
            c => out.push(c),
        }
    }
    out
}

fn png_data_uri(doc: &DesignDocument) -> Result<String> {
    let bg = &doc.canvas.background;
    let img = image::RgbImage::from_raw(bg.width() as u32, bg.height() as u32, bg.pixels().to_vec())
        .ok_or_else(|| Error::validation("background", "raster size mismatch"))?;
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| Error::validation("background", format!("png encoding failed: {e}")))?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

/// Text as displayed: uppercased when capitalization is on.
pub fn display_text(text: &str, capitalization: bool) -> String {
    if capitalization {
        text.to_uppercase()
    } else {
        text.to_string()
    }
}

/// Baseline offsets of each line relative to the first one.
pub fn line_offsets(lines: usize, font_size: f64, line_spacing: f64) -> Vec<f64> {
    (0..lines).map(|i| i as f64 * font_size * line_spacing).collect()
}

pub fn render_svg(spec: &RenderSpec) -> Result<String> {
    let doc = spec.doc;
    if spec.labels.len() != doc.len() {
        return Err(Error::validation(
            "render",
            format!("{} labels for {} elements", spec.labels.len(), doc.len()),
        ));
    }
    let (w, h) = (doc.canvas.width, doc.canvas.height);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-doc-id="{}">"#,
        escape(&doc.id)
    );
    let href = match &spec.background {
        BackgroundMode::Embed => Some(png_data_uri(doc)?),
        BackgroundMode::Link(href) => Some(href.clone()),
        BackgroundMode::None => None,
    };
    if let Some(href) = href {
        let _ = writeln!(
            out,
            r#"<image x="0" y="0" width="{w}" height="{h}" preserveAspectRatio="none" xlink:href="{}"/>"#,
            escape(&href)
        );
    }
    for (i, (elem, bins)) in doc.elements.iter().zip(spec.labels).enumerate() {
        let raw = spec.codebooks.decode_attributes(bins)?;
        let text = display_text(&elem.text, raw.capitalization);
        let lines: Vec<&str> = text.split('\n').collect();
        let longest = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64;
        let width = longest * (GLYPH_ADVANCE * raw.font_size + raw.letter_spacing);
        let offsets = line_offsets(lines.len(), raw.font_size, raw.line_spacing);
        let block = raw.font_size + offsets.last().copied().unwrap_or(0.0);
        let first_baseline = elem.center_y - block / 2.0 + raw.font_size;
        let (x, anchor) = match raw.alignment {
            Alignment::Left => (elem.center_x - width / 2.0, "start"),
            Alignment::Center => (elem.center_x, "middle"),
            Alignment::Right => (elem.center_x + width / 2.0, "end"),
        };
        let _ = write!(
            out,
            r#"<g class="{GROUP_CLASS}" data-index="{i}" data-font="{}" data-color="{}" data-alignment="{}" data-capitalization="{}" data-font-size="{}" data-angle="{}" data-letter-spacing="{}" data-line-spacing="{}""#,
            raw.font,
            raw.color.hex(),
            raw.alignment.name(),
            raw.capitalization,
            raw.font_size,
            raw.angle,
            raw.letter_spacing,
            raw.line_spacing
        );
        if raw.angle != 0.0 {
            let _ = write!(out, r#" transform="rotate({} {} {})""#, raw.angle, elem.center_x, elem.center_y);
        }
        out.push_str(">\n");
        let _ = writeln!(
            out,
            r#"<text font-family="{}" font-size="{}" fill="{}" text-anchor="{anchor}" letter-spacing="{}" xml:space="preserve">"#,
            escape(spec.family(raw.font)),
            raw.font_size,
            raw.color.hex(),
            raw.letter_spacing
        );
        for (line, dy) in lines.iter().zip(&offsets) {
            let _ = writeln!(out, r#"<tspan x="{x}" y="{}">{}</tspan>"#, first_baseline + dy, escape(line));
        }
        out.push_str("</text>\n</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, index: usize, name: &str) -> Result<&'a str> {
    node.attribute(name).ok_or_else(|| Error::Parse {
        record: format!("element {index}"),
        field: name.to_string(),
        message: "missing attribute".into(),
    })
}

fn number(node: roxmltree::Node, index: usize, name: &str) -> Result<f64> {
    let s = attr(node, index, name)?;
    s.parse().map_err(|_| Error::Parse {
        record: format!("element {index}"),
        field: name.to_string(),
        message: format!("`{s}` is not a number"),
    })
}

/// Recovers the decoded values of every element of a rendering.
pub fn roundtrip_labels(svg: &str) -> Result<Vec<RawTypography>> {
    let tree = roxmltree::Document::parse(svg).map_err(|e| Error::Parse {
        record: "svg".into(),
        field: "<xml>".into(),
        message: e.to_string(),
    })?;
    let root = tree.root_element();
    if root.tag_name().name() != "svg" || root.attribute("data-doc-id").is_none() {
        return Err(Error::Parse {
            record: "svg".into(),
            field: "svg".into(),
            message: "not a typography rendering".into(),
        });
    }
    let mut out = Vec::new();
    for (i, g) in root
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "g" && n.attribute("class") == Some(GROUP_CLASS))
        .enumerate()
    {
        let bad = |field: &str, message: String| Error::Parse {
            record: format!("element {i}"),
            field: field.into(),
            message,
        };
        let font = attr(g, i, "data-font")?
            .parse()
            .map_err(|_| bad("data-font", "not a font id".into()))?;
        let color_s = attr(g, i, "data-color")?;
        let color = Rgb::from_hex(color_s).ok_or_else(|| bad("data-color", format!("`{color_s}` is not a hex color")))?;
        let align_s = attr(g, i, "data-alignment")?;
        let alignment = Alignment::ALL
            .into_iter()
            .find(|a| a.name() == align_s)
            .ok_or_else(|| bad("data-alignment", format!("unknown alignment `{align_s}`")))?;
        let capitalization = match attr(g, i, "data-capitalization")? {
            "true" => true,
            "false" => false,
            other => return Err(bad("data-capitalization", format!("`{other}` is not a boolean"))),
        };
        out.push(RawTypography {
            font,
            color,
            alignment,
            capitalization,
            font_size: number(g, i, "data-font-size")?,
            angle: number(g, i, "data-angle")?,
            letter_spacing: number(g, i, "data-letter-spacing")?,
            line_spacing: number(g, i, "data-line-spacing")?,
        });
    }
    Ok(out)
}

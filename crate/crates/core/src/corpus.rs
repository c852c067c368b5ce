//! Synthetic corpus built from designer rules, and train/val/test splits.
//!
//! Each document stacks a few semantic groups (title, subtitle, body,
//! list items) on a procedural background. Every member of a group shares
//! all typographic values; different groups in a document always differ
//! in font and color, and the title is set larger than the body. Text is
//! dark on bright backgrounds and light on dark ones.
//!
//! A per-document theme, visible as the background tint, narrows each
//! role's font and color to two candidates, so labels are predictable from
//! context up to a coin flip per group.
//!
//! Now and then a later member of a group is set apart as an accent. It
//! moves to a separate accent group that takes the role's other font and
//! color candidates, which makes "same as the previous element?" a real
//! question for the model.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{Lab, Rgb};
use crate::doc_model::{
    write_documents, Alignment, CanvasSpec, DesignDocument, Label, Raster, RawTypography, TextElement,
    TypographicAttributes, MAX_ELEMENTS,
};
use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "documents.jsonl";
pub const BACKGROUND_DIR: &str = "backgrounds";
/// Background rasters are stored at this fraction of the canvas size.
const RASTER_SCALE: u32 = 8;
const WORDS: &[&str] = &[
    "summer", "sale", "fresh", "coffee", "menu", "grand", "opening", "weekend", "special", "offer", "live", "music",
    "night", "garden", "party", "studio", "design", "workshop", "market", "local", "handmade", "bakery", "morning",
    "yoga", "class", "join", "us", "today", "free", "entry", "limited", "time", "only", "new", "collection", "autumn",
    "winter", "spring", "festival", "art", "gallery", "book", "club", "travel", "deals", "healthy", "salad", "soup",
    "dessert", "tea", "wine", "tasting", "community", "charity", "run", "city", "tour", "photo", "contest", "kids",
];
const TITLE_SIZES: &[f64] = &[36.0, 42.0, 48.0, 56.0, 64.0, 72.0];
const SUBTITLE_SIZES: &[f64] = &[20.0, 24.0, 28.0];
const BODY_SIZES: &[f64] = &[12.0, 14.0, 16.0, 18.0];
const LIST_SIZES: &[f64] = &[14.0, 16.0, 18.0, 20.0];
const LETTER_SPACINGS: &[f64] = &[-1.0, 0.0, 0.5, 1.0, 2.0, 4.0];
const LINE_SPACINGS: &[f64] = &[1.0, 1.2, 1.4, 1.6];
const DECORATIVE_ANGLES: &[f64] = &[-15.0, -10.0, -5.0, 5.0, 10.0, 15.0];
/// Probability that a title is rotated.
const DECORATIVE_RATE: f64 = 0.08;
const PALETTE_HUES: usize = 24;
pub const THEMES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTemplate {
    TitleBody,
    TitleSubtitleBody,
    TitleList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub num_documents: usize,
    pub max_elements: usize,
    pub font_vocab_size: usize,
    /// Font and color candidates per role within a theme.
    pub role_candidates: usize,
    /// Emit text box extents; otherwise elements carry centers only.
    pub with_boxes: bool,
    /// Chance that a later member of a group is set apart as an accent:
    /// it moves to the group's accent group, which uses another font and
    /// color candidate of the same role.
    pub accent_rate: f64,
    pub seed: u64,
    /// Template weights; normalized when drawing.
    pub structure_profile: Vec<(GroupTemplate, f64)>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_documents: 1000,
            max_elements: 8,
            font_vocab_size: 16,
            role_candidates: 2,
            with_boxes: false,
            accent_rate: 0.15,
            seed: 0,
            structure_profile: vec![
                (GroupTemplate::TitleBody, 0.3),
                (GroupTemplate::TitleSubtitleBody, 0.3),
                (GroupTemplate::TitleList, 0.4),
            ],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_documents == 0 {
            return Err(Error::Config("num_documents must be at least 1".into()));
        }
        if self.max_elements == 0 || self.max_elements > MAX_ELEMENTS {
            return Err(Error::Config(format!("max_elements must be in 1..={MAX_ELEMENTS}")));
        }
        if self.font_vocab_size < 8 || self.font_vocab_size > 261 {
            return Err(Error::Config("font_vocab_size must be in 8..=261".into()));
        }
        if self.role_candidates == 0 || self.role_candidates > self.font_vocab_size / 4 || self.role_candidates > 6 {
            return Err(Error::Config(format!(
                "role_candidates must be in 1..={}",
                (self.font_vocab_size / 4).min(6)
            )));
        }
        if !(0.0..=1.0).contains(&self.accent_rate) {
            return Err(Error::Config("accent_rate must be in [0, 1]".into()));
        }
        let total: f64 = self.structure_profile.iter().map(|(_, w)| w).sum();
        if self.structure_profile.is_empty() || self.structure_profile.iter().any(|(_, w)| !(*w >= 0.0)) || total <= 0.0
        {
            return Err(Error::Config("structure_profile needs non-negative weights with a positive sum".into()));
        }
        Ok(())
    }

    /// Font ids used by the generator, spread over the full id range.
    pub fn font_vocabulary(&self) -> Vec<u16> {
        (0..self.font_vocab_size).map(|i| (i * 261 / self.font_vocab_size) as u16).collect()
    }
}

/// A generated document plus the group id of each element.
#[derive(Debug, Clone)]
pub struct SyntheticDocument {
    pub doc: DesignDocument,
    pub groups: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Title = 0,
    Subtitle = 1,
    Body = 2,
    ListItem = 3,
}

/// Vocabulary index of a theme's font candidate for a role; roles never
/// share a candidate within a theme.
fn font_slot(vocab: usize, theme: usize, role: Role, candidate: usize) -> usize {
    (2 * theme + (vocab / 4) * role as usize + candidate) % vocab
}

/// Palette hue of a theme's color candidate for a role.
fn color_slot(theme: usize, role: Role, candidate: usize) -> usize {
    (3 * theme + 6 * role as usize + candidate) % PALETTE_HUES
}

/// Text colors: a dark and a light family, one color per hue.
fn palette(dark: bool) -> Vec<Rgb> {
    (0..PALETTE_HUES)
        .map(|i| {
            let angle = i as f64 / PALETTE_HUES as f64 * std::f64::consts::TAU;
            let (l, chroma) = if dark { (25.0 + (i % 3) as f64 * 6.0, 30.0) } else { (88.0 - (i % 3) as f64 * 4.0, 18.0) };
            Lab::new(l, chroma * angle.cos(), chroma * angle.sin()).to_rgb()
        })
        .collect()
}

/// Background tone tinted toward the theme hue.
fn background_color(rng: &mut ChaCha8Rng, bright: bool, theme: usize) -> Rgb {
    let hue = theme as f64 / THEMES as f64 * std::f64::consts::TAU;
    loop {
        let l: f64 = if bright { rng.gen_range(65.0..97.0) } else { rng.gen_range(5.0..40.0) };
        let chroma: f64 = rng.gen_range(12.0..28.0);
        let c = Lab::new(l, chroma * hue.cos(), chroma * hue.sin()).to_rgb();
        if (bright && c.luma() > 0.55) || (!bright && c.luma() < 0.45) {
            return c;
        }
    }
}

fn background(rng: &mut ChaCha8Rng, width: u32, height: u32, bright: bool, theme: usize) -> Result<Raster> {
    let (w, h) = (((width / RASTER_SCALE).max(8)) as usize, ((height / RASTER_SCALE).max(8)) as usize);
    let a = background_color(rng, bright, theme);
    let b = background_color(rng, bright, theme);
    match rng.gen_range(0..3) {
        0 => Raster::filled(w, h, a),
        1 => {
            let vertical = rng.gen_bool(0.5);
            Raster::from_fn(w, h, |x, y| {
                let t = if vertical { y as f64 / (h - 1) as f64 } else { x as f64 / (w - 1) as f64 };
                Rgb([0, 1, 2].map(|i| (a.0[i] as f64 * (1.0 - t) + b.0[i] as f64 * t).round() as u8))
            })
        }
        _ => {
            let cell = rng.gen_range(2..=6);
            Raster::from_fn(w, h, |x, y| if (x / cell + y / cell) % 2 == 0 { a } else { b })
        }
    }
}

fn words(rng: &mut ChaCha8Rng, count: std::ops::RangeInclusive<usize>) -> Vec<&'static str> {
    let n = rng.gen_range(count);
    (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect()
}

fn lines(rng: &mut ChaCha8Rng, count: std::ops::RangeInclusive<usize>, per_line: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(count);
    (0..n)
        .map(|_| words(rng, per_line.clone()).join(" "))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Subtitles, paragraphs and list items share one length distribution,
/// so the text alone does not reveal which group an element belongs to.
fn text_for(rng: &mut ChaCha8Rng, role: Role) -> String {
    match role {
        Role::Title => words(rng, 1..=3).join(" "),
        Role::Subtitle | Role::ListItem | Role::Body => lines(rng, 1..=2, 2..=5),
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    *options.choose(rng).expect("non-empty")
}

/// Generates one document; elements come out in raster order.
fn generate_one(cfg: &GeneratorConfig, index: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticDocument> {
    let total: f64 = cfg.structure_profile.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen_range(0.0..total);
    let mut template = cfg.structure_profile[0].0;
    for (t, w) in &cfg.structure_profile {
        if u < *w {
            template = *t;
            break;
        }
        u -= w;
    }
    let mut roles: Vec<(Role, usize)> = match template {
        GroupTemplate::TitleBody => {
            let paragraphs = rng.gen_range(2..=4);
            std::iter::once(Role::Title).chain(std::iter::repeat(Role::Body).take(paragraphs)).map(|r| (r, 0)).collect()
        }
        GroupTemplate::TitleSubtitleBody => {
            let paragraphs = rng.gen_range(2..=4);
            [Role::Title, Role::Subtitle]
                .into_iter()
                .chain(std::iter::repeat(Role::Body).take(paragraphs))
                .map(|r| (r, 0))
                .collect()
        }
        GroupTemplate::TitleList => {
            let items = rng.gen_range(2..=6);
            std::iter::once(Role::Title).chain(std::iter::repeat(Role::ListItem).take(items)).map(|r| (r, 0)).collect()
        }
    };
    roles.truncate(cfg.max_elements);
    let mut group = 0;
    for i in 0..roles.len() {
        if i > 0 && roles[i].0 != roles[i - 1].0 {
            group += 1;
        }
        roles[i].1 = group;
    }
    let group_count = group + 1;

    let width = 100 * rng.gen_range(4..=10);
    let height = 100 * rng.gen_range(4..=10);
    let bright = rng.gen_bool(0.5);
    let theme = rng.gen_range(0..THEMES);
    let raster = background(rng, width, height, bright, theme)?;

    // Per-group typography.
    let fonts = cfg.font_vocabulary();
    let colors = palette(bright);
    let role_of = |g: usize| roles.iter().find(|(_, gg)| *gg == g).expect("group has members").0;
    let k = cfg.role_candidates;
    let group_candidates: Vec<(usize, usize)> = (0..group_count).map(|_| (rng.gen_range(0..k), rng.gen_range(0..k))).collect();
    let font_of = |g: usize, c: usize| fonts[font_slot(fonts.len(), theme, role_of(g), c)];
    let color_of = |g: usize, c: usize| colors[color_slot(theme, role_of(g), c)];
    let layout_alignment = pick(rng, &Alignment::ALL);
    let title_angle = if rng.gen_bool(DECORATIVE_RATE) { pick(rng, DECORATIVE_ANGLES) } else { 0.0 };

    let mut group_raw: Vec<RawTypography> = Vec::with_capacity(group_count);
    for g in 0..group_count {
        let role = role_of(g);
        let (size, capitalization, letter_spacing) = match role {
            Role::Title => (pick(rng, TITLE_SIZES), rng.gen_bool(0.5), pick(rng, &LETTER_SPACINGS[1..])),
            Role::Subtitle => (pick(rng, SUBTITLE_SIZES), rng.gen_bool(0.3), pick(rng, &LETTER_SPACINGS[..4])),
            Role::Body => (pick(rng, BODY_SIZES), false, pick(rng, &LETTER_SPACINGS[..3])),
            Role::ListItem => (pick(rng, LIST_SIZES), rng.gen_bool(0.2), pick(rng, &LETTER_SPACINGS[..4])),
        };
        let alignment = if rng.gen_bool(0.8) { layout_alignment } else { pick(rng, &Alignment::ALL) };
        group_raw.push(RawTypography {
            font: font_of(g, group_candidates[g].0),
            color: color_of(g, group_candidates[g].1),
            alignment,
            capitalization,
            font_size: size,
            angle: if role == Role::Title { title_angle } else { 0.0 },
            letter_spacing,
            line_spacing: if role == Role::Body { pick(rng, &LINE_SPACINGS[1..]) } else { pick(rng, LINE_SPACINGS) },
        });
    }

    // Vertical stack with margins; positions follow alignment.
    let (w, h) = (width as f64, height as f64);
    let margin = 0.08 * w;
    let texts: Vec<String> = roles.iter().map(|(r, _)| text_for(rng, *r)).collect();
    let boxes: Vec<(f64, f64)> = roles
        .iter()
        .zip(&texts)
        .map(|((_, g), text)| {
            let raw = &group_raw[*g];
            let longest = text.lines().map(|l| l.chars().count()).max().unwrap_or(1) as f64;
            let lines = text.lines().count().max(1) as f64;
            let bw = (longest * (0.6 * raw.font_size + raw.letter_spacing)).min(w - 2.0 * margin);
            let bh = raw.font_size * (1.0 + (lines - 1.0) * raw.line_spacing);
            (bw.max(1.0), bh)
        })
        .collect();
    // Everything below the title sits on one uniform pitch.
    let gap = 0.02 * h;
    let pitch = boxes.iter().skip(1).map(|b| b.1).fold(0.0, f64::max) + gap;
    let slot = |i: usize| if i == 0 { boxes[0].1 + gap } else { pitch };
    let stack: f64 = (0..boxes.len()).map(slot).sum::<f64>() - gap;
    let mut y = if stack < h { rng.gen_range(0.05..0.95) * (h - stack).max(0.0) } else { 0.0 };
    let mut elements = Vec::with_capacity(roles.len());
    let mut labels = Vec::with_capacity(roles.len());
    let mut groups = Vec::with_capacity(roles.len());
    // Accent groups take other candidates of the parent's role; ids follow
    // the template groups in order of first use.
    let other = |rng: &mut ChaCha8Rng, c: usize| (c + rng.gen_range(1..k.max(2))) % k;
    let accents: Vec<(u16, Rgb)> = (0..group_count)
        .map(|g| (font_of(g, other(rng, group_candidates[g].0)), color_of(g, other(rng, group_candidates[g].1))))
        .collect();
    let mut accent_ids: Vec<Option<usize>> = vec![None; group_count];
    let mut next_group = group_count;
    for (i, (((_, g), text), (bw, bh))) in roles.iter().zip(texts).zip(&boxes).enumerate() {
        let mut raw = group_raw[*g];
        let mut member_of = *g;
        if k > 1 && i > 0 && roles[i - 1].1 == *g && rng.gen_bool(cfg.accent_rate) {
            (raw.font, raw.color) = accents[*g];
            member_of = *accent_ids[*g].get_or_insert_with(|| {
                next_group += 1;
                next_group - 1
            });
        }
        let cx = match raw.alignment {
            Alignment::Left => margin + bw / 2.0,
            Alignment::Center => w / 2.0,
            Alignment::Right => w - margin - bw / 2.0,
        };
        let cy = (y + if i == 0 { bh / 2.0 } else { (pitch - gap) / 2.0 }).min(h - 1.0);
        let elem = TextElement::new(text, cx, cy);
        elements.push(if cfg.with_boxes { elem.with_box(*bw, *bh) } else { elem });
        labels.push(Label {
            bins: TypographicAttributes::default(),
            raw,
        });
        groups.push(member_of);
        y += slot(i);
    }
    let id = format!("syn-{index:06}");
    let doc = DesignDocument {
        canvas: CanvasSpec {
            width,
            height,
            background: Arc::new(raster),
            background_path: format!("{BACKGROUND_DIR}/{id}.ppm"),
            aspect_bin: 0,
            numtext_bin: 0,
        },
        id,
        elements,
        labels: Some(labels),
    };
    let mut sorted = doc.clone();
    sorted.sort_raster();
    if sorted != doc {
        return Err(Error::validation(&doc.id, "generated layout is not in raster order"));
    }
    doc.validate()?;
    Ok(SyntheticDocument { doc, groups })
}

/// Documents with their generator group ids. Document `i` depends only on
/// `(seed, i)`.
pub fn generate_with_groups(cfg: &GeneratorConfig) -> Result<Vec<SyntheticDocument>> {
    cfg.validate()?;
    (0..cfg.num_documents)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            generate_one(cfg, i, &mut rng)
        })
        .collect()
}

/// Labelled documents with raw typography; bins are left at zero until
/// codebooks are fitted.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Vec<DesignDocument>> {
    Ok(generate_with_groups(cfg)?.into_iter().map(|s| s.doc).collect())
}

/// Writes `documents.jsonl` and one PPM background per document into `dir`.
pub fn write_corpus(dir: &Path, docs: &[DesignDocument]) -> Result<()> {
    let bg_dir = dir.join(BACKGROUND_DIR);
    fs::create_dir_all(&bg_dir).map_err(|e| Error::io(&bg_dir, e))?;
    for doc in docs {
        doc.canvas.background.write_ppm(&dir.join(&doc.canvas.background_path))?;
    }
    write_documents(&dir.join(CORPUS_FILE), docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [8.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

/// Largest-remainder apportionment of `n` items; remainders tie toward
/// the earlier part.
pub fn split_sizes(n: usize, ratios: &[f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be positive")));
    }
    if n < 3 {
        return Err(Error::validation("split", format!("{n} documents cannot fill 3 parts")));
    }
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut sizes = quotas.iter().map(|q| q.floor() as usize).collect::<Vec<_>>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok([sizes[0], sizes[1], sizes[2]])
}

/// Seeded shuffle, then train/val/test by ratio.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [a, b, _] = split_sizes(items.len(), &spec.ratios)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((take(0..a), take(a..a + b), take(a + b..items.len())))
}

//! The typography encoder-decoder.
//!
//! The encoder turns the canvas and every element into a token sequence
//! of length `3 + 6T` (canvas background, aspect, text count; per element
//! text, left, top, line count, char count, background) and runs
//! self-attention over it. The decoder walks the elements in raster order:
//! its query for element `t` is a learned position embedding plus the sum
//! of the label embeddings of element `t - 1` (a start token for the
//! first element). Each head sees the decoder output concatenated with a
//! skip MLP over the element's and the canvas' raw embeddings.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc_model::{Attribute, ContextAttribute, DesignDocument, TypographicAttributes, MAX_ELEMENTS};
use crate::error::{Error, Result};
use crate::features::{extract_document, DocumentFeatures, FeatureExtractor, StatisticsExtractor, IMAGE_DIM, TEXT_DIM};
use crate::nn::layers::INIT_STD;
use crate::nn::{
    AdamW, DecoderBlock, EncoderBlock, Gradients, Init, LayerNorm, Linear, Matrix, ParamId, ParameterStore, Tape, Var,
};
use crate::quantizer::CodebookSet;

/// Logit offset that removes a bin from the softmax support.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration for CPU training.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 32,
            ff_dim: 64,
            heads: 2,
            encoder_blocks: 2,
            decoder_blocks: 2,
            dropout: 0.0,
            seed: 0,
        }
    }

    /// Full-scale sizes: 256-wide embeddings, 512-wide feed-forward, 8
    /// heads, 8 blocks split evenly between encoder and decoder.
    pub fn full() -> Self {
        ModelConfig {
            embed_dim: 256,
            ff_dim: 512,
            heads: 8,
            encoder_blocks: 4,
            decoder_blocks: 4,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("ff_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layout {
    canvas_image: Linear,
    element_image: Linear,
    text: Linear,
    /// One table per context attribute, in `ContextAttribute::ALL` order.
    context_tables: Vec<ParamId>,
    element_position: ParamId,
    encoder: Vec<EncoderBlock>,
    encoder_norm: LayerNorm,
    decoder_position: ParamId,
    start: ParamId,
    label_tables: Vec<ParamId>,
    decoder: Vec<DecoderBlock>,
    decoder_norm: LayerNorm,
    skip_hidden: Linear,
    skip_out: Linear,
    heads: Vec<Linear>,
}

/// Per-attribute logits of one element, in `Attribute::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementLogits(pub Vec<Vec<f64>>);

impl ElementLogits {
    pub fn get(&self, attr: Attribute) -> &[f64] {
        &self.0[attr.index()]
    }

    pub fn probabilities(&self, attr: Attribute) -> Vec<f64> {
        let logits = self.get(attr);
        let mut p = vec![0.0; logits.len()];
        crate::nn::tape::softmax_into(logits, &mut p);
        p
    }

    /// Argmax with ties going to the lowest label id.
    pub fn argmax(&self, attr: Attribute) -> u16 {
        let logits = self.get(attr);
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best as u16
    }
}

/// A document with its continuous features extracted.
#[derive(Debug, Clone)]
pub struct PreparedDocument<'d> {
    pub doc: &'d DesignDocument,
    pub features: DocumentFeatures,
}

/// Encoder output kept for autoregressive decoding.
#[derive(Debug, Clone)]
pub struct EncodedContext {
    /// `Z'`, shape `(3 + 6T) x D`.
    pub memory: Matrix,
    /// Skip-MLP output per element, shape `T x D`.
    pub skip: Matrix,
}

impl EncodedContext {
    pub fn len(&self) -> usize {
        self.skip.rows
    }

    pub fn is_empty(&self) -> bool {
        self.skip.rows == 0
    }
}

/// Parameterized encoder-decoder plus its feature extractor.
pub struct TypographyModel {
    config: ModelConfig,
    store: ParameterStore,
    layout: Layout,
    label_counts: [usize; 8],
    codebook_hash: String,
    extractor: Arc<dyn FeatureExtractor>,
}

impl std::fmt::Debug for TypographyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TypographyModel")
            .field("config", &self.config)
            .field("parameters", &self.store.scalar_count())
            .field("label_counts", &self.label_counts)
            .finish()
    }
}

impl Clone for TypographyModel {
    fn clone(&self) -> Self {
        TypographyModel {
            config: self.config.clone(),
            store: self.store.clone(),
            layout: self.layout.clone(),
            label_counts: self.label_counts,
            codebook_hash: self.codebook_hash.clone(),
            extractor: Arc::clone(&self.extractor),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    config: ModelConfig,
    label_counts: [usize; 8],
    codebook_hash: String,
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    checkpoint.with_file_name(name)
}

impl TypographyModel {
    /// Fresh model whose heads are restricted to the bins the codebooks define.
    pub fn new(config: ModelConfig, codebooks: &CodebookSet) -> Result<Self> {
        let counts = Attribute::ALL.map(|a| codebooks.label_count(a));
        Self::with_label_counts(config, counts, codebooks.hash())
    }

    pub fn with_label_counts(config: ModelConfig, label_counts: [usize; 8], codebook_hash: String) -> Result<Self> {
        config.validate()?;
        for (attr, &n) in Attribute::ALL.iter().zip(&label_counts) {
            if n == 0 || n > attr.cardinality() {
                return Err(Error::Config(format!("{attr}: {n} usable labels, head has {}", attr.cardinality())));
            }
        }
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        let s = &mut store;
        let r = &mut rng;
        let table = |s: &mut ParameterStore, r: &mut ChaCha8Rng, name: &str, rows: usize| {
            s.add(name, rows, d, Init::TruncatedNormal(INIT_STD), r)
        };
        let canvas_image = Linear::new(s, "input.canvas_image", IMAGE_DIM, d, r)?;
        let element_image = Linear::new(s, "input.element_image", IMAGE_DIM, d, r)?;
        let text = Linear::new(s, "input.text", TEXT_DIM, d, r)?;
        let context_tables = ContextAttribute::ALL
            .iter()
            .map(|c| table(s, r, &format!("input.{}", c.name()), c.cardinality()))
            .collect::<Result<Vec<_>>>()?;
        let element_position = table(s, r, "input.element_position", MAX_ELEMENTS)?;
        let encoder = (0..config.encoder_blocks)
            .map(|i| EncoderBlock::new(s, &format!("encoder.{i}"), d, config.ff_dim, config.heads, r))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(s, "encoder.norm", d, r)?;
        let decoder_position = table(s, r, "decoder.position", MAX_ELEMENTS)?;
        let start = table(s, r, "decoder.start", 1)?;
        let label_tables = Attribute::ALL
            .iter()
            .map(|a| table(s, r, &format!("decoder.label.{}", a.name()), a.cardinality()))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..config.decoder_blocks)
            .map(|i| DecoderBlock::new(s, &format!("decoder.{i}"), d, config.ff_dim, config.heads, r))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(s, "decoder.norm", d, r)?;
        let skip_hidden = Linear::new(s, "skip.hidden", 9 * d, d, r)?;
        let skip_out = Linear::new(s, "skip.out", d, d, r)?;
        let heads = Attribute::ALL
            .iter()
            .map(|a| Linear::new(s, &format!("head.{}", a.name()), 2 * d, a.cardinality(), r))
            .collect::<Result<Vec<_>>>()?;
        let layout = Layout {
            canvas_image,
            element_image,
            text,
            context_tables,
            element_position,
            encoder,
            encoder_norm,
            decoder_position,
            start,
            label_tables,
            decoder,
            decoder_norm,
            skip_hidden,
            skip_out,
            heads,
        };
        Ok(TypographyModel {
            config,
            store,
            layout,
            label_counts,
            codebook_hash,
            extractor: Arc::new(StatisticsExtractor),
        })
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn FeatureExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn label_counts(&self) -> [usize; 8] {
        self.label_counts
    }

    pub fn codebook_hash(&self) -> &str {
        &self.codebook_hash
    }

    pub fn prepare<'d>(&self, doc: &'d DesignDocument) -> Result<PreparedDocument<'d>> {
        if doc.is_empty() || doc.len() > MAX_ELEMENTS {
            return Err(Error::validation(
                format!("document {}", doc.id),
                format!("element count {} outside 1..={MAX_ELEMENTS}", doc.len()),
            ));
        }
        Ok(PreparedDocument {
            doc,
            features: extract_document(self.extractor.as_ref(), doc)?,
        })
    }

    /// Builds the encoder graph. Returns `(Z', skip output)`.
    fn encode_on(&self, tape: &mut Tape, prep: &PreparedDocument) -> Result<(Var, Var)> {
        let l = &self.layout;
        let doc = prep.doc;
        let t = doc.len();
        let d = self.config.embed_dim;
        let dropout = self.config.dropout;

        let canvas_feat = tape.constant(Matrix::new(1, IMAGE_DIM, prep.features.canvas_image.clone())?);
        let canvas_bg = l.canvas_image.forward(tape, canvas_feat)?;
        let aspect_table = tape.param(l.context_tables[0]);
        let aspect = tape.gather_rows(aspect_table, &[doc.canvas.aspect_bin as usize])?;
        let count_table = tape.param(l.context_tables[1]);
        let count = tape.gather_rows(count_table, &[doc.canvas.numtext_bin as usize])?;

        let text_feat = tape.constant(Matrix::new(t, TEXT_DIM, prep.features.texts.concat())?);
        let text = l.text.forward(tape, text_feat)?;
        let image_feat = tape.constant(Matrix::new(t, IMAGE_DIM, prep.features.element_images.concat())?);
        let image = l.element_image.forward(tape, image_feat)?;
        let lookup = |tape: &mut Tape, table: ParamId, bins: Vec<usize>| {
            let tv = tape.param(table);
            tape.gather_rows(tv, &bins)
        };
        let left = lookup(tape, l.context_tables[2], doc.elements.iter().map(|e| e.left_bin as usize).collect())?;
        let top = lookup(tape, l.context_tables[3], doc.elements.iter().map(|e| e.top_bin as usize).collect())?;
        let lines = lookup(tape, l.context_tables[4], doc.elements.iter().map(|e| e.line_count_bin as usize).collect())?;
        let chars = lookup(tape, l.context_tables[5], doc.elements.iter().map(|e| e.char_count_bin as usize).collect())?;
        let position = lookup(tape, l.element_position, (0..t).collect())?;

        let element_parts = [text, left, top, lines, chars, image];
        let mut tokens = vec![canvas_bg, aspect, count];
        for part in element_parts {
            tokens.push(tape.add(part, position)?);
        }
        let mut z = tape.concat_rows(&tokens)?;
        debug_assert_eq!(tape.shape(z), (3 + 6 * t, d));
        z = tape.dropout(z, dropout);
        for block in &l.encoder {
            z = block.forward(tape, z, dropout)?;
        }
        let memory = l.encoder_norm.forward(tape, z)?;

        let canvas_row = tape.concat_cols(&[canvas_bg, aspect, count])?;
        let canvas_rows = tape.gather_rows(canvas_row, &vec![0; t])?;
        let mut skip_parts = element_parts.to_vec();
        skip_parts.push(canvas_rows);
        let skip_in = tape.concat_cols(&skip_parts)?;
        let hidden = l.skip_hidden.forward(tape, skip_in)?;
        let hidden = tape.gelu(hidden);
        let skip = l.skip_out.forward(tape, hidden)?;
        Ok((memory, skip))
    }

    /// Decoder graph for the first `prev.len() + 1` elements when
    /// `prev` holds the labels of the elements before the last one.
    /// `skip` must have one row per decoded element.
    fn decode_on(&self, tape: &mut Tape, memory: Var, skip: Var, prev: &[TypographicAttributes]) -> Result<Vec<Var>> {
        let l = &self.layout;
        let rows = prev.len() + 1;
        let dropout = self.config.dropout;
        let mut query = tape.param(l.start);
        if !prev.is_empty() {
            let mut pooled: Option<Var> = None;
            for attr in Attribute::ALL {
                let table = tape.param(l.label_tables[attr.index()]);
                let bins: Vec<usize> = prev.iter().map(|p| p.get(attr) as usize).collect();
                let e = tape.gather_rows(table, &bins)?;
                pooled = Some(match pooled {
                    Some(acc) => tape.add(acc, e)?,
                    None => e,
                });
            }
            query = tape.concat_rows(&[query, pooled.expect("eight attributes")])?;
        }
        let positions = tape.param(l.decoder_position);
        let positions = tape.gather_rows(positions, &(0..rows).collect::<Vec<_>>())?;
        let mut h = tape.add(query, positions)?;
        h = tape.dropout(h, dropout);
        for block in &l.decoder {
            h = block.forward(tape, h, memory, dropout)?;
        }
        let h = l.decoder_norm.forward(tape, h)?;
        let head_in = tape.concat_cols(&[h, skip])?;
        let mut logits = Vec::with_capacity(8);
        for attr in Attribute::ALL {
            let out = l.heads[attr.index()].forward(tape, head_in)?;
            let usable = self.label_counts[attr.index()];
            if usable < attr.cardinality() {
                let mask: Vec<f64> = (0..attr.cardinality())
                    .map(|i| if i < usable { 0.0 } else { MASKED_LOGIT })
                    .collect();
                let mask = tape.constant(Matrix::new(1, attr.cardinality(), mask)?);
                logits.push(tape.add_row(out, mask)?);
            } else {
                logits.push(out);
            }
        }
        Ok(logits)
    }

    /// Runs the encoder once; the result is reused for every decoding step.
    pub fn encode_context(&self, prep: &PreparedDocument) -> Result<EncodedContext> {
        let mut tape = Tape::new(&self.store);
        let (memory, skip) = self.encode_on(&mut tape, prep)?;
        Ok(EncodedContext {
            memory: tape.to_matrix(memory),
            skip: tape.to_matrix(skip),
        })
    }

    /// Logits for element `prev.len() + 1` given the labels of all earlier
    /// elements.
    pub fn decode_logits(&self, ctx: &EncodedContext, prev: &[TypographicAttributes]) -> Result<ElementLogits> {
        let t = prev.len();
        if t >= ctx.len() {
            return Err(Error::OutOfRange(format!("element {} of {}", t + 1, ctx.len())));
        }
        let mut tape = Tape::new(&self.store);
        let memory = tape.constant(ctx.memory.clone());
        let d = ctx.skip.cols;
        let skip = tape.constant(Matrix::new(t + 1, d, ctx.skip.data[..(t + 1) * d].to_vec())?);
        let logits = self.decode_on(&mut tape, memory, skip, prev)?;
        Ok(ElementLogits(
            logits
                .iter()
                .map(|v| {
                    let (r, c) = tape.shape(*v);
                    tape.value(*v)[(r - 1) * c..].to_vec()
                })
                .collect(),
        ))
    }

    fn labels_of(&self, prep: &PreparedDocument) -> Result<Vec<TypographicAttributes>> {
        prep.doc
            .label_bins()
            .ok_or_else(|| Error::validation(format!("document {}", prep.doc.id), "missing labels"))
    }

    fn loss_on(&self, tape: &mut Tape, prep: &PreparedDocument) -> Result<Var> {
        let labels = self.labels_of(prep)?;
        let (memory, skip) = self.encode_on(tape, prep)?;
        let logits = self.decode_on(tape, memory, skip, &labels[..labels.len() - 1])?;
        let mut total: Option<Var> = None;
        for attr in Attribute::ALL {
            let targets: Vec<usize> = labels.iter().map(|l| l.get(attr) as usize).collect();
            let ce = tape.cross_entropy(logits[attr.index()], &targets)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, ce)?,
                None => ce,
            });
        }
        Ok(total.expect("eight attributes"))
    }

    /// Teacher-forced cross entropy summed over elements and attributes.
    pub fn loss(&self, prep: &PreparedDocument) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let loss = self.loss_on(&mut tape, prep)?;
        Ok(tape.value(loss)[0])
    }

    /// Loss and parameter gradients; dropout is active when `rng` is given.
    pub fn loss_and_gradients(&self, prep: &PreparedDocument, rng: Option<ChaCha8Rng>) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(&self.store);
        if let Some(rng) = rng {
            tape = tape.with_dropout(rng);
        }
        let loss = self.loss_on(&mut tape, prep)?;
        let value = tape.value(loss)[0];
        Ok((value, tape.backward(loss)?))
    }

    /// Teacher-forced logits of every element.
    pub fn teacher_forced_logits(&self, prep: &PreparedDocument) -> Result<Vec<ElementLogits>> {
        let labels = self.labels_of(prep)?;
        let mut tape = Tape::new(&self.store);
        let (memory, skip) = self.encode_on(&mut tape, prep)?;
        let logits = self.decode_on(&mut tape, memory, skip, &labels[..labels.len() - 1])?;
        Ok((0..labels.len())
            .map(|t| {
                ElementLogits(
                    logits
                        .iter()
                        .map(|v| {
                            let c = tape.shape(*v).1;
                            tape.value(*v)[t * c..(t + 1) * c].to_vec()
                        })
                        .collect(),
                )
            })
            .collect())
    }

    /// Writes the binary checkpoint plus a JSON sidecar next to it.
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.store.save_checkpoint(checkpoint)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            label_counts: self.label_counts,
            codebook_hash: self.codebook_hash.clone(),
        };
        let path = sidecar_path(checkpoint);
        fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint, refusing codebooks other than the ones it was
    /// trained with.
    pub fn load(checkpoint: &Path, codebooks: &CodebookSet) -> Result<Self> {
        let path = sidecar_path(checkpoint);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let hash = codebooks.hash();
        if sidecar.codebook_hash != hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with codebooks {}, got {}",
                sidecar.codebook_hash, hash
            )));
        }
        let mut model = Self::with_label_counts(sidecar.config, sidecar.label_counts, sidecar.codebook_hash)?;
        model.store.load_checkpoint(checkpoint)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub optimizer: AdamW,
    pub seed: u64,
    /// Compute the validation loss every this many epochs.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            max_steps: None,
            optimizer: AdamW::default(),
            seed: 0,
            val_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-document loss of each optimizer step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

/// Mean per-document loss over a set.
pub fn mean_loss(model: &TypographyModel, docs: &[PreparedDocument]) -> Result<f64> {
    let mut total = 0.0;
    for p in docs {
        total += model.loss(p)?;
    }
    Ok(total / docs.len().max(1) as f64)
}

/// Mini-batch training with periodic validation. When a validation set is
/// given, the parameters with the lowest validation loss are restored at
/// the end.
pub fn train(
    model: &mut TypographyModel,
    train_set: &[DesignDocument],
    val_set: &[DesignDocument],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::validation("training", "empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let train_prep = train_set.iter().map(|d| model.prepare(d)).collect::<Result<Vec<_>>>()?;
    let val_prep = val_set.iter().map(|d| model.prepare(d)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_prep.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<ParameterStore> = None;
    let mut step = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_docs = 0;
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            model.store.zero_grad();
            let mut batch_loss = 0.0;
            for &i in batch {
                let dropout_rng = (model.config.dropout > 0.0).then(|| ChaCha8Rng::seed_from_u64(rand::Rng::gen(&mut rng)));
                let (loss, grads) = model.loss_and_gradients(&train_prep[i], dropout_rng)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { step, loss });
                }
                model.store.accumulate(&grads, 1.0 / batch.len() as f64);
                batch_loss += loss;
            }
            cfg.optimizer.step(&mut model.store)?;
            step += 1;
            log.step_losses.push(batch_loss / batch.len() as f64);
            epoch_loss += batch_loss;
            epoch_docs += batch.len();
        }
        let train_loss = epoch_loss / epoch_docs.max(1) as f64;
        let val_loss = if !val_prep.is_empty() && (epoch % cfg.val_every.max(1) == 0 || epoch == cfg.epochs) {
            let v = mean_loss(model, &val_prep)?;
            if !v.is_finite() {
                return Err(Error::Diverged { step, loss: v });
            }
            if log.best_val_loss.map_or(true, |b| v < b) {
                log.best_val_loss = Some(v);
                log.best_epoch = Some(epoch);
                best = Some(model.store.clone());
            }
            Some(v)
        } else {
            None
        };
        info!("epoch {epoch} step {step}: train loss {train_loss:.4} val loss {val_loss:?}");
        log.epochs.push(EpochLog {
            epoch,
            step,
            train_loss,
            val_loss,
        });
    }
    if let Some(best) = best {
        model.store.copy_values_from(&best)?;
    }
    Ok(log)
}

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use typogen_core::corpus::{generate_synthetic, split, write_corpus, GeneratorConfig, SplitSpec, CORPUS_FILE};
use typogen_core::doc_model::{load_documents, load_raw_documents};
use typogen_core::metrics::{sweep_csv, EvalReport, Evaluator, ModeBaseline, SweepRow, TruthBasis};
use typogen_core::model::{train, TrainConfig, TypographyModel};
use typogen_core::nn::optim::AdamW;
use typogen_core::quantizer::CodebookSet;
use typogen_core::render::{render_svg, BackgroundMode, RenderSpec};
use typogen_core::sampling::{predict_top1, sample, Lock, SampleSet, SamplingConfig, SamplingMode};
use typogen_core::{Attribute, DesignDocument, TypographicAttributes};

use crate::api::{parse_mode, PredictResponse};
use crate::config::{require, AppConfig};
use crate::server::{serve, ServiceState, Snapshot};

#[derive(Debug, Parser)]
#[command(name = "typogen", version, about = "Typography suggestions for design documents")]
pub struct Cli {
    /// TOML configuration file; TYPOGEN_* variables override its paths.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus (JSONL plus PPM backgrounds).
    GenSynthetic(GenArgs),
    /// Fit the k-means codebooks on a corpus split.
    FitCodebooks(FitArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Top-1 prediction for every selected document, as JSON lines.
    Predict(PredictArgs),
    /// Draw N label assignments for one document, as SampleSet JSON.
    Sample(SampleArgs),
    /// Score model samples, a baseline or a predictions file.
    Eval(EvalArgs),
    /// Structure/diversity sweep over nucleus masses, as CSV.
    Sweep(SweepArgs),
    /// Render one document to SVG.
    Render(RenderArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus JSONL file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Codebook JSON file.
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    /// Seed of the train/val/test shuffle.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, short = 'n', default_value_t = 1000)]
    pub num_documents: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub max_elements: usize,
    /// Number of distinct font ids in use.
    #[arg(long, default_value_t = 16)]
    pub font_vocab: usize,
    /// Font and color candidates per role within a theme.
    #[arg(long, default_value_t = 2)]
    pub role_candidates: usize,
    /// Also write text box extents.
    #[arg(long)]
    pub boxes: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Documents the codebooks are fitted on.
    #[arg(long, value_enum, default_value_t = SplitName::Train)]
    pub split: SplitName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (defaults to the configured codebooks path).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Configured [model] section (desk size unless overridden).
    Config,
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: CorpusArgs,
    /// Checkpoint to write (defaults to the configured one).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Config)]
    pub preset: Preset,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training log JSON.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub data: CorpusArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Only this document.
    #[arg(long)]
    pub doc_id: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_p(s: &str) -> Result<(Attribute, f64), String> {
    let (name, v) = s.split_once('=').ok_or("expected ATTRIBUTE=P")?;
    let attr = Attribute::from_name(name).ok_or_else(|| format!("unknown attribute `{name}`"))?;
    let p: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(format!("p={p} outside (0, 1]"));
    }
    Ok((attr, p))
}

fn parse_lock(s: &str) -> Result<Lock, String> {
    let (key, label) = s.split_once('=').ok_or("expected ATTRIBUTE:CLUSTER=LABEL")?;
    let (name, cluster) = key.split_once(':').ok_or("expected ATTRIBUTE:CLUSTER=LABEL")?;
    Ok(Lock {
        attribute: Attribute::from_name(name).ok_or_else(|| format!("unknown attribute `{name}`"))?,
        cluster: cluster.parse().map_err(|_| format!("`{cluster}` is not a cluster id"))?,
        label: label.parse().map_err(|_| format!("`{label}` is not a label id"))?,
    })
}

fn parse_mode_arg(s: &str) -> Result<SamplingMode, String> {
    parse_mode(s).ok_or_else(|| format!("unknown mode `{s}` (plain, structure, top1)"))
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// plain, structure (structure_preserved) or top1.
    #[arg(long, value_parser = parse_mode_arg)]
    pub mode: Option<SamplingMode>,
    /// Nucleus mass, e.g. `--p font=0.9999`; repeatable.
    #[arg(long = "p", value_parser = parse_p, value_name = "ATTRIBUTE=P")]
    pub p: Vec<(Attribute, f64)>,
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pin a predicted cluster, e.g. `--lock color:1=12`; repeatable.
    #[arg(long = "lock", value_parser = parse_lock, value_name = "ATTRIBUTE:CLUSTER=LABEL")]
    pub locks: Vec<Lock>,
}

impl SamplingArgs {
    fn apply(&self, mut cfg: SamplingConfig) -> SamplingConfig {
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.p_k.extend(self.p.iter().copied());
        if let Some(n) = self.n {
            cfg.n_samples = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.locks.extend(self.locks.iter().copied());
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Document id; the first document of the corpus when absent.
    #[arg(long)]
    pub doc_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Score the per-attribute mode of the training split instead of a model.
    #[arg(long, conflicts_with = "predictions")]
    pub mode_baseline: bool,
    /// Score the JSON lines written by `predict` instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BasisArg::Raw)]
    pub basis: BasisArg,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Raw,
    Decoded,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Nucleus masses to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9,0.9999")]
    pub ps: Vec<f64>,
    /// Attributes whose nucleus mass is swept.
    #[arg(long, value_delimiter = ',', default_value = "font,color")]
    pub attributes: Vec<String>,
    #[arg(long, short = 'n', default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate at most this many documents.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub doc_id: Option<String>,
    /// Render a sample from this SampleSet JSON instead of the labels.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub sample_index: usize,
    /// Use the model's top-1 prediction (needs a checkpoint).
    #[arg(long, conflicts_with = "samples")]
    pub top1: bool,
    /// Reference the background file instead of embedding it.
    #[arg(long)]
    pub link_background: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// Parses arguments and runs; usage errors exit 2, runtime failures 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = AppConfig::load(cli.config.as_deref())?;
    cfg.validate()?;
    let _ = env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(&cfg, a),
        Command::FitCodebooks(a) => fit_codebooks(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Predict(a) => predict_cmd(&cfg, a),
        Command::Sample(a) => sample_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Sweep(a) => sweep_cmd(&cfg, a),
        Command::Render(a) => render_cmd(&cfg, a),
        Command::Serve(a) => serve_cmd(&cfg, a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn select<T: Clone>(items: &[T], which: SplitName, seed: u64) -> anyhow::Result<Vec<T>> {
    if which == SplitName::All {
        return Ok(items.to_vec());
    }
    let (train, val, test) = split(items, &SplitSpec { seed, ..Default::default() })?;
    Ok(match which {
        SplitName::Train => train,
        SplitName::Val => val,
        SplitName::Test => test,
        SplitName::All => unreachable!(),
    })
}

struct Loaded {
    codebooks: CodebookSet,
    docs: Vec<DesignDocument>,
}

fn load_corpus(cfg: &AppConfig, a: &CorpusArgs) -> anyhow::Result<Loaded> {
    let cb_path = require(&a.codebooks, &cfg.paths.codebooks, "codebooks")?;
    let corpus = require(&a.corpus, &cfg.paths.corpus, "corpus")?;
    let codebooks = CodebookSet::load(&cb_path)?;
    let docs = load_documents(&corpus, &codebooks)?;
    info!("loaded {} documents from {}", docs.len(), corpus.display());
    Ok(Loaded { codebooks, docs })
}

fn load_model(cfg: &AppConfig, a: &ModelArgs, codebooks: &CodebookSet) -> anyhow::Result<TypographyModel> {
    let ckpt = require(&a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    Ok(TypographyModel::load(&ckpt, codebooks)?)
}

fn find_doc<'d>(docs: &'d [DesignDocument], id: Option<&str>) -> anyhow::Result<&'d DesignDocument> {
    match id {
        Some(id) => docs.iter().find(|d| d.id == id).with_context(|| format!("no document `{id}`")),
        None => docs.first().context("empty corpus"),
    }
}

fn gen_synthetic(cfg: &AppConfig, a: GenArgs) -> anyhow::Result<()> {
    let out = require(&a.out, &cfg.paths.output, "out")?;
    let gen = GeneratorConfig {
        num_documents: a.num_documents,
        max_elements: a.max_elements,
        font_vocab_size: a.font_vocab,
        role_candidates: a.role_candidates,
        with_boxes: a.boxes,
        seed: a.seed,
        ..Default::default()
    };
    let docs = generate_synthetic(&gen)?;
    write_corpus(&out, &docs)?;
    info!("wrote {} documents to {}", docs.len(), out.join(CORPUS_FILE).display());
    Ok(())
}

fn fit_codebooks(cfg: &AppConfig, a: FitArgs) -> anyhow::Result<()> {
    let corpus = require(&a.data.corpus, &cfg.paths.corpus, "corpus")?;
    let out = a
        .out
        .or_else(|| a.data.codebooks.clone())
        .or_else(|| cfg.paths.codebooks.clone())
        .context("no output path: pass --out or set paths.codebooks")?;
    let docs = select(&load_raw_documents(&corpus)?, a.split, a.data.split_seed)?;
    let cb = CodebookSet::fit(&docs, a.seed)?;
    cb.save(&out)?;
    info!("fitted codebooks on {} documents -> {}", docs.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &AppConfig, a: TrainArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.data)?;
    let out = a
        .out
        .or_else(|| cfg.paths.checkpoint.clone())
        .context("no checkpoint path: pass --out or set paths.checkpoint")?;
    let model_cfg = match a.preset {
        Preset::Config => cfg.model.clone(),
        Preset::Desk => typogen_core::model::ModelConfig::desk(),
        Preset::Full => typogen_core::model::ModelConfig::full(),
    };
    let (train_set, val_set, _) = split(&docs, &SplitSpec { seed: a.data.split_seed, ..Default::default() })?;
    let mut model = TypographyModel::new(model_cfg, &codebooks)?;
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        max_steps: a.max_steps,
        optimizer: AdamW {
            lr: a.lr,
            weight_decay: a.weight_decay,
            ..AdamW::default()
        },
        seed: a.seed,
        ..Default::default()
    };
    let log = train(&mut model, &train_set, &val_set, &tc)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(&out)?;
    info!(
        "saved {} (best epoch {:?}, val loss {:?})",
        out.display(),
        log.best_epoch,
        log.best_val_loss
    );
    if let Some(p) = a.log {
        emit(Some(&p), &serde_json::to_string_pretty(&log)?)?;
    }
    Ok(())
}

fn predict_cmd(cfg: &AppConfig, a: PredictArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.model.data)?;
    let model = load_model(cfg, &a.model, &codebooks)?;
    let docs = match &a.doc_id {
        Some(id) => vec![find_doc(&docs, Some(id))?.clone()],
        None => select(&docs, a.split, a.model.data.split_seed)?,
    };
    let mut out = String::new();
    for doc in &docs {
        let top = predict_top1(&model, doc)?;
        out.push_str(&serde_json::to_string(&PredictResponse {
            doc_id: doc.id.clone(),
            labels: top.labels,
            clusters: top.clusters,
        })?);
        out.push('\n');
    }
    emit(a.out.as_deref(), &out)
}

fn sample_cmd(cfg: &AppConfig, a: SampleArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.model.data)?;
    let model = load_model(cfg, &a.model, &codebooks)?;
    let doc = find_doc(&docs, a.doc_id.as_deref())?;
    let sc = a.sampling.apply(cfg.sampling.clone());
    let set = sample(&model, doc, &sc)?;
    let mut json = set.to_json()?;
    json.push('\n');
    emit(a.out.as_deref(), &json)
}

/// Scores `predict(doc)` for every document.
pub fn evaluate(
    codebooks: &CodebookSet,
    docs: &[DesignDocument],
    basis: TruthBasis,
    mut predict: impl FnMut(&DesignDocument) -> anyhow::Result<Vec<Vec<TypographicAttributes>>>,
) -> anyhow::Result<EvalReport> {
    let mut ev = Evaluator::new(codebooks, basis);
    for doc in docs {
        ev.add(doc, &predict(doc)?)?;
    }
    Ok(ev.finish()?)
}

fn samples_of(set: &SampleSet) -> Vec<Vec<TypographicAttributes>> {
    (0..set.samples.len()).map(|n| set.sample_labels(n)).collect()
}

fn eval_cmd(cfg: &AppConfig, a: EvalArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.model.data)?;
    let seed = a.model.data.split_seed;
    let targets = select(&docs, a.split, seed)?;
    let basis = match a.basis {
        BasisArg::Raw => TruthBasis::Raw,
        BasisArg::Decoded => TruthBasis::Decoded,
    };
    let report = if a.mode_baseline {
        let baseline = ModeBaseline::fit_documents(&select(&docs, SplitName::Train, seed)?)?;
        evaluate(&codebooks, &targets, basis, |d| Ok(vec![baseline.predict(d)]))?
    } else if let Some(path) = &a.predictions {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut preds = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let p: PredictResponse =
                serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
            preds.insert(p.doc_id, p.labels);
        }
        let targets: Vec<_> = targets.into_iter().filter(|d| preds.contains_key(&d.id)).collect();
        if targets.is_empty() {
            bail!("no prediction matches a document of the selected split");
        }
        evaluate(&codebooks, &targets, basis, |d| Ok(vec![preds[&d.id].clone()]))?
    } else {
        let model = load_model(cfg, &a.model, &codebooks)?;
        let mut sc = SamplingConfig {
            mode: SamplingMode::Top1,
            n_samples: 1,
            ..cfg.sampling.clone()
        };
        sc = a.sampling.apply(sc);
        evaluate(&codebooks, &targets, basis, |d| Ok(samples_of(&sample(&model, d, &sc)?)))?
    };
    let text = match a.format {
        Format::Json => report.to_json()? + "\n",
        Format::Table => report.to_table(),
    };
    emit(a.out.as_deref(), &text)
}

pub const SWEEP_MODES: [SamplingMode; 2] = [SamplingMode::Plain, SamplingMode::StructurePreserved];

/// One report per (mode, p) with `swept` attributes at mass `p`; rows for
/// every attribute.
pub fn sweep(
    model: &TypographyModel,
    codebooks: &CodebookSet,
    docs: &[DesignDocument],
    ps: &[f64],
    swept: &[Attribute],
    base: &SamplingConfig,
) -> anyhow::Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for mode in SWEEP_MODES {
        for &p in ps {
            let mut sc = SamplingConfig { mode, ..base.clone() };
            for &attr in swept {
                sc.p_k.insert(attr, p);
            }
            let report = evaluate(codebooks, docs, TruthBasis::Raw, |d| Ok(samples_of(&sample(model, d, &sc)?)))?;
            rows.extend(Attribute::ALL.iter().map(|&attr| SweepRow::from_report(mode.name(), p, attr, &report)));
        }
    }
    Ok(rows)
}

fn sweep_cmd(cfg: &AppConfig, a: SweepArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.model.data)?;
    let model = load_model(cfg, &a.model, &codebooks)?;
    let mut targets = select(&docs, a.split, a.model.data.split_seed)?;
    if let Some(l) = a.limit {
        targets.truncate(l);
    }
    let swept = a
        .attributes
        .iter()
        .map(|n| Attribute::from_name(n).with_context(|| format!("unknown attribute `{n}`")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(p) = a.ps.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        bail!("p={p} outside (0, 1]");
    }
    let base = SamplingConfig {
        n_samples: a.n,
        seed: a.seed,
        locks: Vec::new(),
        ..cfg.sampling.clone()
    };
    let rows = sweep(&model, &codebooks, &targets, &a.ps, &swept, &base)?;
    emit(a.out.as_deref(), &sweep_csv(&rows))
}

fn render_cmd(cfg: &AppConfig, a: RenderArgs) -> anyhow::Result<()> {
    let Loaded { codebooks, docs } = load_corpus(cfg, &a.model.data)?;
    let doc = find_doc(&docs, a.doc_id.as_deref())?;
    let labels = if let Some(path) = &a.samples {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let set: SampleSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if set.doc_id != doc.id {
            bail!("samples are for `{}`, not `{}`", set.doc_id, doc.id);
        }
        if a.sample_index >= set.samples.len() {
            bail!("sample {} of {}", a.sample_index, set.samples.len());
        }
        set.sample_labels(a.sample_index)
    } else if a.top1 {
        predict_top1(&load_model(cfg, &a.model, &codebooks)?, doc)?.labels
    } else {
        doc.label_bins().context("document has no labels; pass --top1 or --samples")?
    };
    let mut spec = RenderSpec::new(doc, &labels, &codebooks);
    if a.link_background {
        spec.background = BackgroundMode::Link(doc.canvas.background_path.clone());
    }
    emit(a.out.as_deref(), &render_svg(&spec)?)
}

fn serve_cmd(cfg: &AppConfig, a: ServeArgs) -> anyhow::Result<()> {
    let ckpt = a.checkpoint.or_else(|| cfg.paths.checkpoint.clone());
    let cb = a.codebooks.or_else(|| cfg.paths.codebooks.clone());
    let static_dir = a.static_dir.or_else(|| cfg.paths.static_dir.clone());
    if let Some(dir) = &static_dir {
        if !dir.is_dir() {
            bail!("static dir {} is not a directory", dir.display());
        }
    }
    let sources = ckpt.zip(cb);
    let snapshot = match &sources {
        Some((ckpt, cb)) => Some(Snapshot::load(ckpt, cb).with_context(|| format!("loading {}", ckpt.display()))?),
        None => {
            log::warn!("no checkpoint configured; inference endpoints answer 503");
            None
        }
    };
    let state = Arc::new(ServiceState::new(snapshot, cfg.sampling.clone(), sources));
    let bind = a.bind.unwrap_or(cfg.server.bind);
    tokio::runtime::Runtime::new()?.block_on(serve(state, bind, static_dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_flag() {
        assert_eq!(parse_p("font=0.9999").unwrap(), (Attribute::Font, 0.9999));
        assert!(parse_p("font=0").is_err());
        assert!(parse_p("weight=0.5").is_err());
    }

    #[test]
    fn lock_flag() {
        let l = parse_lock("color:1=12").unwrap();
        assert_eq!((l.attribute, l.cluster, l.label), (Attribute::Color, 1, 12));
        assert!(parse_lock("color=12").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(main_with_args(["typogen", "sample", "--bogus"]), ExitCode::from(2));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

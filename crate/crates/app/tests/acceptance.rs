//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. Every tolerance is pinned below.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use typogen_app::cli::{sweep, SWEEP_MODES};
use typogen_core::color::{Lab, Rgb};
use typogen_core::corpus::{generate_synthetic, split, GeneratorConfig, SplitSpec};
use typogen_core::doc_model::{derive_context_bins, encode_labels, CanvasSpec, RawTypography, Raster, TextElement};
use typogen_core::metrics::{ciede2000, diversity_score, structure_score, ModeBaseline, SweepRow};
use typogen_core::model::{train, ModelConfig, TrainConfig, TypographyModel};
use typogen_core::nn::optim::AdamW;
use typogen_core::quantizer::{fit_kmeans_1d, Codebook, CodebookSet};
use typogen_core::render::{render_svg, roundtrip_labels, BackgroundMode, RenderSpec};
use typogen_core::sampling::{
    argmax, predict_top1, sample, top_p_filter, SamplingConfig, SamplingMode,
};
use typogen_core::{Attribute, DesignDocument, TypographicAttributes};

// A1
const GRAD_H: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
/// Parameters are checked at a random point: the initial values plus
/// N(0, std) noise, so attention keys and queries carry real gradients.
const GRAD_PERTURB_STD: f64 = 0.1;
/// Roundoff of a central difference is about `ulps * eps * |loss| / h`.
/// Gradients below that divided by the tolerance (key biases are exactly
/// zero) are compared on that absolute scale instead.
const GRAD_ROUNDOFF_ULPS: f64 = 4.0;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
// A2
const OVERFIT_DOCS: usize = 32;
const OVERFIT_TARGET: f64 = 0.90;
const OVERFIT_MAX_STEPS: usize = 5_000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
// A3 / A4
const TREND_DOCS: usize = 2_500;
const TREND_MIN_TRAIN: usize = 2_000;
const TREND_EPOCHS: usize = 24;
const TREND_LR: f64 = 2e-3;
const TREND_SAMPLES: usize = 10;
const TREND_PS: [f64; 4] = [0.1, 0.5, 0.9, 0.9999];
const TREND_GAP: f64 = 5.0;
const TREND_DRIFT: f64 = 3.0;
const TREND_BUDGET: Duration = Duration::from_secs(1_800);
const DIVERSITY_SLACK: f64 = 1.0;
// A5
const TOP_P_TOL: f64 = 1e-12;
const TOP_P_TRIALS: usize = 10_000;
// A6
const INVARIANT_DOCS: usize = 50;
const INVARIANT_SAMPLES: usize = 100;
// A7
const CIEDE_TOL: f64 = 1e-4;
const CIEDE_SYMMETRY_TOL: f64 = 1e-9;
const CIEDE_RANDOM_PAIRS: usize = 1_000;
// A8
const METRIC_TOL: f64 = 1e-9;
// A10
const LLOYD_TOL: f64 = 1e-9;
// A11
const RENDER_CASES: usize = 1_000;
const RENDER_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn corpus(n: usize, seed: u64) -> (Vec<DesignDocument>, CodebookSet) {
    let raw = generate_synthetic(&GeneratorConfig {
        num_documents: n,
        seed,
        ..Default::default()
    })
    .expect("synthetic corpus");
    let cb = CodebookSet::fit(&raw, seed).expect("codebooks");
    (encode_all(raw, &cb), cb)
}

fn encode_all(docs: Vec<DesignDocument>, cb: &CodebookSet) -> Vec<DesignDocument> {
    docs.into_iter()
        .map(|d| encode_labels(derive_context_bins(d, cb).unwrap(), cb).unwrap())
        .collect()
}

// ---------------------------------------------------------------------------

fn a1_gradient_check() -> Outcome {
    let start = Instant::now();
    let (docs, cb) = corpus(8, 11);
    let cfg = ModelConfig {
        embed_dim: 8,
        ff_dim: 16,
        heads: 2,
        encoder_blocks: 1,
        decoder_blocks: 1,
        dropout: 0.0,
        seed: 5,
    };
    let mut model = TypographyModel::new(cfg, &cb).map_err(e)?;
    let ids: Vec<_> = model.store().ids().collect();
    let noise = Normal::new(0.0, GRAD_PERTURB_STD).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &id in &ids {
        model.store_mut().value_mut(id).iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    let doc = docs.iter().find(|d| d.len() == 3).ok_or("no 3-element document")?.clone();
    let prep = model.prepare(&doc).map_err(e)?;
    let (loss, grads) = model.loss_and_gradients(&prep, None).map_err(e)?;
    let floor = GRAD_ROUNDOFF_ULPS * f64::EPSILON * loss.abs().max(1.0) / GRAD_H / GRAD_REL_TOL;
    let mut analytic: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; model.store().value(id).len()]).collect();
    for (id, g) in grads.entries {
        analytic[id.index()].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    let mut floored = 0usize;
    for &id in &ids {
        for i in 0..model.store().value(id).len() {
            let orig = model.store().value(id)[i];
            model.store_mut().value_mut(id)[i] = orig + GRAD_H;
            let up = model.loss(&prep).map_err(e)?;
            model.store_mut().value_mut(id)[i] = orig - GRAD_H;
            let down = model.loss(&prep).map_err(e)?;
            model.store_mut().value_mut(id)[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_H);
            let a = analytic[id.index()][i];
            let scale = a.abs().max(numeric.abs());
            floored += (scale < floor) as usize;
            let rel = (a - numeric).abs() / scale.max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]: analytic {a:e} numeric {numeric:e}", model.store().get(id).name));
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{checked} scalars in {} tensors, max rel err {:.2e} at {} ({floored} below the {floor:.1e} roundoff floor; {elapsed:.1?})",
        ids.len(),
        worst.0,
        worst.1
    );
    ensure(worst.0 < GRAD_REL_TOL, || detail.clone())?;
    ensure(elapsed < GRAD_BUDGET, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn top1_accuracy(model: &TypographyModel, docs: &[DesignDocument]) -> Result<[f64; 8], String> {
    let mut hits = [0usize; 8];
    let mut total = 0usize;
    for d in docs {
        let pred = predict_top1(model, d).map_err(e)?;
        for (p, t) in pred.labels.iter().zip(d.label_bins().unwrap()) {
            for a in Attribute::ALL {
                hits[a.index()] += (p.get(a) == t.get(a)) as usize;
            }
            total += 1;
        }
    }
    Ok(hits.map(|h| h as f64 / total as f64))
}

fn a2_overfit() -> Outcome {
    let start = Instant::now();
    let (docs, cb) = corpus(OVERFIT_DOCS, 21);
    let mut model = TypographyModel::new(ModelConfig::desk(), &cb).map_err(e)?;
    let chunk = 200;
    let mut steps = 0;
    let mut acc = [0.0; 8];
    while steps < OVERFIT_MAX_STEPS {
        let cfg = TrainConfig {
            epochs: usize::MAX,
            batch_size: 8,
            max_steps: Some(chunk.min(OVERFIT_MAX_STEPS - steps)),
            optimizer: AdamW {
                lr: 2e-3,
                ..AdamW::default()
            },
            seed: steps as u64,
            val_every: 1,
        };
        let log = train(&mut model, &docs, &[], &cfg).map_err(e)?;
        steps += log.step_losses.len();
        acc = top1_accuracy(&model, &docs)?;
        if acc.iter().all(|a| *a >= OVERFIT_TARGET) {
            break;
        }
    }
    let elapsed = start.elapsed();
    let table = Attribute::ALL
        .iter()
        .map(|a| format!("{}={:.1}%", a.name(), 100.0 * acc[a.index()]))
        .collect::<Vec<_>>()
        .join(" ");
    let detail = format!("{steps} steps, {elapsed:.1?}: {table}");
    ensure(acc.iter().all(|a| *a >= OVERFIT_TARGET), || detail.clone())?;
    ensure(elapsed < OVERFIT_BUDGET, || format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Trains the shared model for the trend criteria and returns the sweep.
fn trend_rows() -> Result<(Vec<SweepRow>, usize, Duration), String> {
    let start = Instant::now();
    let raw = generate_synthetic(&GeneratorConfig {
        num_documents: TREND_DOCS,
        seed: 1,
        ..Default::default()
    })
    .map_err(e)?;
    let (train_raw, val_raw, test_raw) = split(&raw, &SplitSpec::default()).map_err(e)?;
    let cb = CodebookSet::fit(&train_raw, 0).map_err(e)?;
    let (train_set, val_set, test_set) = (encode_all(train_raw, &cb), encode_all(val_raw, &cb), encode_all(test_raw, &cb));
    let mut model = TypographyModel::new(
        ModelConfig {
            dropout: 0.1,
            ..ModelConfig::desk()
        },
        &cb,
    )
    .map_err(e)?;
    let cfg = TrainConfig {
        epochs: TREND_EPOCHS,
        optimizer: AdamW {
            lr: TREND_LR,
            ..AdamW::default()
        },
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, &val_set, &cfg).map_err(e)?;
    let base = SamplingConfig {
        n_samples: TREND_SAMPLES,
        seed: 7,
        ..SamplingConfig::default()
    };
    let rows = sweep(&model, &cb, &test_set, &TREND_PS, &[Attribute::Font, Attribute::Color], &base).map_err(e)?;
    Ok((rows, train_set.len(), start.elapsed()))
}

fn row<'r>(rows: &'r [SweepRow], mode: SamplingMode, p: f64, attr: Attribute) -> &'r SweepRow {
    rows.iter()
        .find(|r| r.mode == mode.name() && r.p == p && r.attribute == attr)
        .expect("sweep row")
}

fn a3_trend(rows: &[SweepRow], train_docs: usize, elapsed: Duration) -> Outcome {
    ensure(train_docs >= TREND_MIN_TRAIN, || format!("only {train_docs} training documents"))?;
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for attr in [Attribute::Font, Attribute::Color] {
        let s = |mode, p| row(rows, mode, p, attr).structure.unwrap_or(f64::NAN);
        let sp_hi = s(SamplingMode::StructurePreserved, 0.9999);
        let sp_lo = s(SamplingMode::StructurePreserved, 0.1);
        let plain_hi = s(SamplingMode::Plain, 0.9999);
        let plain_lo = s(SamplingMode::Plain, 0.1);
        let gap = sp_hi - plain_hi;
        let (sp_drift, plain_drift) = ((sp_hi - sp_lo).abs(), (plain_hi - plain_lo).abs());
        parts.push(format!(
            "{}: structure@0.9999 sp {sp_hi:.2} plain {plain_hi:.2} (gap {gap:.2}); drift from p=0.1 sp {sp_drift:.2} plain {plain_drift:.2}",
            attr.name()
        ));
        if !(gap >= TREND_GAP) {
            failures.push(format!("{} gap {gap:.2} < {TREND_GAP}", attr.name()));
        }
        // "each stays within 3 points of its own p=0.1 value" applies to
        // the structure-preserved curve; plain is expected to fall.
        if !(sp_drift <= TREND_DRIFT) {
            failures.push(format!("{} structure-preserved drift {sp_drift:.2} > {TREND_DRIFT}", attr.name()));
        }
    }
    if elapsed > TREND_BUDGET {
        failures.push(format!("took {elapsed:.1?}"));
    }
    let detail = format!("{train_docs} training docs, {elapsed:.1?}; {}", parts.join("; "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}: {detail}", failures.join(", ")))
    }
}

fn a4_diversity(rows: &[SweepRow]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for mode in SWEEP_MODES {
        let d: Vec<f64> = TREND_PS
            .iter()
            .map(|&p| row(rows, mode, p, Attribute::Font).diversity.unwrap_or(f64::NAN))
            .collect();
        ok &= d.windows(2).all(|w| w[1] >= w[0] - DIVERSITY_SLACK);
        parts.push(format!(
            "{}: {}",
            mode.name(),
            d.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(" <= ")
        ));
    }
    let detail = format!("font diversity over p={TREND_PS:?}: {}", parts.join("; "));
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn a5_top_p() -> Outcome {
    let out = top_p_filter(&[0.5, 0.3, 0.2], 0.7).map_err(e)?;
    let expect = [0.625, 0.375, 0.0];
    ensure(out.iter().zip(expect).all(|(a, b)| (a - b).abs() <= TOP_P_TOL), || {
        format!("top_p([0.5,0.3,0.2], 0.7) = {out:?}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut identity_max = 0.0f64;
    for trial in 0..TOP_P_TRIALS {
        let k = rng.gen_range(1..=64);
        let mut probs: Vec<f64> = (0..k)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>().powi(3) })
            .collect();
        if rng.gen_bool(0.1) {
            // ties
            let v = probs[0];
            probs.iter_mut().step_by(2).for_each(|x| *x = v);
        }
        let total: f64 = probs.iter().sum();
        if total == 0.0 {
            probs[0] = 1.0;
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|x| *x /= total);
        let same = top_p_filter(&probs, 1.0).map_err(e)?;
        identity_max = probs.iter().zip(&same).map(|(a, b)| (a - b).abs()).fold(identity_max, f64::max);
        let p = rng.gen_range(1e-6..=1.0);
        let f = top_p_filter(&probs, p).map_err(e)?;
        let m = argmax(&f) as usize;
        ensure(f[m] > 0.0 && probs[m] > 0.0, || format!("trial {trial}: argmax {m} outside support"))?;
        ensure(argmax(&probs) as usize == m, || format!("trial {trial}: filter moved the argmax"))?;
        let mass: f64 = f.iter().sum();
        ensure((mass - 1.0).abs() < 1e-9, || format!("trial {trial}: filtered mass {mass}"))?;
    }
    ensure(identity_max <= TOP_P_TOL, || format!("p=1 changed probabilities by {identity_max:e}"))?;
    Ok(format!(
        "worked example exact, p=1 identity (max dev {identity_max:.1e}), argmax in support over {TOP_P_TRIALS} distributions"
    ))
}

fn a6_invariant() -> Outcome {
    let (docs, cb) = corpus(INVARIANT_DOCS, 31);
    // An untrained model spreads its mass widely, which makes the copy rule
    // the only thing keeping clusters intact.
    let model = TypographyModel::new(ModelConfig::desk(), &cb).map_err(e)?;
    let mut cfg = SamplingConfig {
        mode: SamplingMode::StructurePreserved,
        n_samples: INVARIANT_SAMPLES,
        seed: 99,
        ..SamplingConfig::default()
    };
    for a in Attribute::ALL {
        cfg.p_k.insert(a, 1.0);
    }
    let mut violations = 0usize;
    let mut constrained_pairs = 0usize;
    let mut distinct = 0usize;
    for doc in &docs {
        let set = sample(&model, doc, &cfg).map_err(e)?;
        for s in &set.samples {
            for a in Attribute::ALL {
                let cl = set.clusters.of(a);
                for i in 0..s.len() {
                    for j in 0..i {
                        if cl[i] == cl[j] {
                            constrained_pairs += 1;
                            violations += (s[i][a.index()] != s[j][a.index()]) as usize;
                        }
                    }
                }
            }
        }
        distinct += set.samples.iter().collect::<BTreeSet<_>>().len();
    }
    let detail = format!(
        "{violations} violations over {constrained_pairs} constrained pairs ({INVARIANT_DOCS} docs x {INVARIANT_SAMPLES} samples, {distinct} distinct samples)"
    );
    ensure(violations == 0 && constrained_pairs > 0, || detail.clone())?;
    Ok(detail)
}

/// The standard CIEDE2000 verification pairs with their differences
/// recomputed independently to six decimals.
const CIEDE_PAIRS: [([f64; 3], [f64; 3], f64); 34] = [
    ([50.0, 2.6772, -79.7751], [50.0, 0.0, -82.7485], 2.042460),
    ([50.0, 3.1571, -77.2803], [50.0, 0.0, -82.7485], 2.861510),
    ([50.0, 2.8361, -74.0200], [50.0, 0.0, -82.7485], 3.441191),
    ([50.0, -1.3802, -84.2814], [50.0, 0.0, -82.7485], 0.999999),
    ([50.0, -1.1848, -84.8006], [50.0, 0.0, -82.7485], 1.000005),
    ([50.0, -0.9009, -85.5211], [50.0, 0.0, -82.7485], 1.000013),
    ([50.0, 0.0, 0.0], [50.0, -1.0, 2.0], 2.366859),
    ([50.0, -1.0, 2.0], [50.0, 0.0, 0.0], 2.366859),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0009], 7.179172),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0010], 7.179163),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0011], 7.219472),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0012], 7.219474),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0009, -2.4900], 4.804522),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0010, -2.4900], 4.804525),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0011, -2.4900], 4.746071),
    ([50.0, 2.5, 0.0], [50.0, 0.0, -2.5], 4.306482),
    ([50.0, 2.5, 0.0], [73.0, 25.0, -18.0], 27.149231),
    ([50.0, 2.5, 0.0], [61.0, -5.0, 29.0], 22.897692),
    ([50.0, 2.5, 0.0], [56.0, -27.0, -3.0], 31.903005),
    ([50.0, 2.5, 0.0], [58.0, 24.0, 15.0], 19.453521),
    ([50.0, 2.5, 0.0], [50.0, 3.1736, 0.5854], 1.000026),
    ([50.0, 2.5, 0.0], [50.0, 3.2972, 0.0], 0.999973),
    ([50.0, 2.5, 0.0], [50.0, 1.8634, 0.5757], 1.000049),
    ([50.0, 2.5, 0.0], [50.0, 3.2592, 0.3350], 1.000035),
    ([60.2574, -34.0099, 36.2677], [60.4626, -34.1751, 39.4387], 1.264420),
    ([63.0109, -31.0961, -5.8663], [62.8187, -29.7946, -4.0864], 1.262959),
    ([61.2901, 3.7196, -5.3901], [61.4292, 2.2480, -4.9620], 1.873071),
    ([35.0831, -44.1164, 3.7933], [35.0232, -40.0716, 1.5901], 1.864495),
    ([22.7233, 20.0904, -46.6940], [23.0331, 14.9730, -42.5619], 2.037258),
    ([36.4612, 47.8580, 18.3852], [36.2715, 50.5065, 21.2231], 1.414578),
    ([90.8027, -2.0831, 1.4410], [91.1528, -1.6435, 0.0447], 1.444129),
    ([90.9257, -0.5406, -0.9208], [88.6381, -0.8985, -0.7239], 1.538117),
    ([6.7747, -0.2908, -2.4247], [5.8714, -0.0985, -2.2286], 0.637728),
    ([2.0776, 0.0795, -1.1350], [0.9033, -0.0636, -0.5514], 0.908233),
];

fn a7_ciede2000() -> Outcome {
    let lab = |v: [f64; 3]| Lab::new(v[0], v[1], v[2]);
    let mut worst = 0.0f64;
    for (i, (a, b, expect)) in CIEDE_PAIRS.iter().enumerate() {
        let d = ciede2000(&lab(*a), &lab(*b));
        let err = (d - expect).abs();
        worst = worst.max(err);
        ensure(err <= CIEDE_TOL, || format!("pair {}: {d:.6} vs {expect:.6}", i + 1))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut asym = 0.0f64;
    let mut ident = 0.0f64;
    for _ in 0..CIEDE_RANDOM_PAIRS {
        let mut r = || Lab::new(rng.gen_range(0.0..100.0), rng.gen_range(-128.0..128.0), rng.gen_range(-128.0..128.0));
        let (x, y) = (r(), r());
        let (dxy, dyx) = (ciede2000(&x, &y), ciede2000(&y, &x));
        ensure(dxy.is_finite() && dxy >= 0.0, || format!("ΔE({x:?}, {y:?}) = {dxy}"))?;
        asym = asym.max((dxy - dyx).abs());
        ident = ident.max(ciede2000(&x, &x).abs());
    }
    ensure(asym <= CIEDE_SYMMETRY_TOL, || format!("asymmetry {asym:e}"))?;
    ensure(ident <= CIEDE_SYMMETRY_TOL, || format!("ΔE(x, x) up to {ident:e}"))?;
    Ok(format!(
        "34 verification pairs within {worst:.1e}; symmetry {asym:.1e} and identity {ident:.1e} over {CIEDE_RANDOM_PAIRS} random pairs"
    ))
}

fn a8_metrics() -> Outcome {
    // truth [a, a, b] vs prediction [x, y, y]: of the three pairs only
    // (1, 3) agrees ("different" in both).
    let s = structure_score(&[10, 11, 11], &[1, 1, 2]).map_err(e)?.ok_or("no score")?;
    ensure((s - 100.0 / 3.0).abs() < METRIC_TOL, || format!("worked example {s}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..1_000 {
        let n = rng.gen_range(1..=20);
        let vocab = rng.gen_range(1..=30);
        let samples: Vec<Vec<u16>> = (0..n).map(|_| vec![rng.gen_range(0..vocab)]).collect();
        let d = diversity_score(&samples).map_err(e)? / 100.0;
        let unique = samples.iter().collect::<BTreeSet<_>>().len() as f64 / n as f64;
        ensure(d >= 1.0 / n as f64 - METRIC_TOL && d <= 1.0 + METRIC_TOL, || format!("diversity {d} with N={n}"))?;
        ensure((d - unique).abs() < METRIC_TOL, || format!("diversity {d} vs {unique}"))?;
    }

    let (docs, _) = corpus(60, 41);
    let baseline = ModeBaseline::fit_documents(&docs).map_err(e)?;
    for a in Attribute::ALL {
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for d in &docs {
            for l in d.label_bins().unwrap() {
                *counts.entry(l.get(a)).or_default() += 1;
            }
        }
        let best = counts.values().max().copied().unwrap();
        let brute = counts.iter().find(|(_, c)| **c == best).map(|(b, _)| *b).unwrap();
        let got = baseline.predict(&docs[0])[0].get(a);
        ensure(got == brute, || format!("{}: mode {got} vs brute force {brute}", a.name()))?;
    }
    Ok("structure worked example 33.33%; diversity within [1/N, 1] on 1000 random sets; mode baseline equals counting".into())
}

fn run_cli(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_typogen"))
        .args(args)
        .current_dir(dir)
        .env_remove("TYPOGEN_CORPUS")
        .env_remove("TYPOGEN_CODEBOOKS")
        .env_remove("TYPOGEN_CHECKPOINT")
        .output()
        .map_err(e)?;
    ensure(out.status.success(), || {
        format!("`typogen {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

fn cli_pipeline(dir: &Path) -> Result<Vec<u8>, String> {
    run_cli(&["gen-synthetic", "--out", "data", "-n", "60", "--seed", "3"], dir)?;
    run_cli(&["fit-codebooks", "--corpus", "data/documents.jsonl", "--out", "codebooks.json"], dir)?;
    let data = ["--corpus", "data/documents.jsonl", "--codebooks", "codebooks.json"];
    let mut train_args = vec!["train"];
    train_args.extend(data);
    train_args.extend(["--out", "model.ckpt", "--epochs", "2", "--seed", "4"]);
    run_cli(&train_args, dir)?;
    let mut sample_args = vec!["sample"];
    sample_args.extend(data);
    sample_args.extend([
        "--checkpoint",
        "model.ckpt",
        "--mode",
        "structure",
        "--p",
        "font=0.9999",
        "--p",
        "color=0.9999",
        "--n",
        "10",
        "--seed",
        "12",
    ]);
    run_cli(&sample_args, dir)
}

fn a9_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(e)?;
    let b = tempfile::tempdir().map_err(e)?;
    let first = cli_pipeline(a.path())?;
    let second = cli_pipeline(b.path())?;
    let set: typogen_core::sampling::SampleSet = serde_json::from_slice(&first).map_err(e)?;
    ensure(set.samples.len() == 10, || format!("{} samples", set.samples.len()))?;
    let distinct = set.samples.iter().collect::<BTreeSet<_>>().len();
    ensure(first == second, || "SampleSet JSON differs between runs".into())?;
    Ok(format!(
        "two full CLI runs (generate, fit, train, sample) gave byte-identical SampleSet JSON ({} bytes, {distinct} distinct samples)",
        first.len()
    ))
}

/// One Lloyd update from `cb`'s centroids; returns the largest move.
fn lloyd_step_shift(cb: &Codebook, values: &[f64]) -> f64 {
    let mut sums = vec![0.0; cb.k];
    let mut counts = vec![0usize; cb.k];
    for &v in values {
        let b = cb.encode(v) as usize;
        sums[b] += v;
        counts[b] += 1;
    }
    (0..cb.k)
        .filter(|&j| counts[j] > 0)
        .map(|j| (sums[j] / counts[j] as f64 - cb.centroids[j]).abs())
        .fold(0.0, f64::max)
}

fn a10_quantizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut shift = 0.0f64;
    for trial in 0..50 {
        let n = rng.gen_range(20..500);
        let k = rng.gen_range(2..=16);
        let values: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0..5) as f64 } else { rng.gen_range(-50.0..50.0) })
            .collect();
        let (cb, report) = fit_kmeans_1d("x", &values, k, trial).map_err(e)?;
        ensure(report.converged, || format!("trial {trial}: no convergence"))?;
        shift = shift.max(lloyd_step_shift(&cb, &values));
        ensure(report.sse.windows(2).all(|w| w[1] <= w[0] + 1e-9), || format!("trial {trial}: SSE increased"))?;
    }
    ensure(shift <= LLOYD_TOL, || format!("centroids move by {shift:e} under another Lloyd step"))?;

    let raw = generate_synthetic(&GeneratorConfig {
        num_documents: 200,
        seed: 8,
        ..Default::default()
    })
    .map_err(e)?;
    let cb = CodebookSet::fit(&raw, 3).map_err(e)?;
    let again = CodebookSet::fit(&raw, 3).map_err(e)?;
    ensure(cb == again && cb.hash() == again.hash(), || "fit is not deterministic".into())?;
    let mut bins = 0;
    for (name, book) in &cb.codebooks {
        for b in 0..book.k as u16 {
            let v = book.decode(b).map_err(e)?;
            ensure(book.encode(v) == b, || format!("{name}: encode(decode({b})) != {b}"))?;
            bins += 1;
        }
    }
    for b in 0..cb.color.k as u16 {
        ensure(cb.color.encode(cb.color.decode(b).map_err(e)?) == b, || format!("color: encode(decode({b})) != {b}"))?;
        bins += 1;
    }
    Ok(format!(
        "50 random fits converged (max Lloyd shift {shift:.1e}); encode(decode(b)) = b for {bins} bins of {} codebooks; refit identical",
        cb.codebooks.len() + 1
    ))
}

const FUZZ_TEXT: &[&str] = &[
    "Sale", "<b>bold</b>", "Tom & Jerry", "\"quoted\" 'single'", "línea\nsecond line", "日本語テキスト", "a > b < c",
    "emoji 🎉 party", "  spaced  ", "x\u{1}ctrl", "multi\nline\ntext\nhere", "]]> cdata",
];

fn a11_render() -> Outcome {
    let (_, cb) = corpus(100, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let counts: Vec<usize> = Attribute::ALL.iter().map(|&a| cb.label_count(a)).collect();
    for case in 0..RENDER_CASES {
        let (w, h) = (rng.gen_range(16..2000u32), rng.gen_range(16..2000u32));
        let t = rng.gen_range(1..=12);
        let mut elements: Vec<TextElement> = (0..t)
            .map(|_| {
                let text = if rng.gen_bool(0.5) {
                    FUZZ_TEXT[rng.gen_range(0..FUZZ_TEXT.len())].to_string()
                } else {
                    (0..rng.gen_range(1..20)).map(|_| char::from_u32(rng.gen_range(0x20..0x2FFF)).unwrap_or('?')).collect()
                };
                TextElement::new(text, rng.gen_range(0.0..=w as f64), rng.gen_range(0.0..=h as f64))
            })
            .collect();
        elements.sort_by(|a, b| a.center_y.total_cmp(&b.center_y).then(a.center_x.total_cmp(&b.center_x)));
        let labels: Vec<TypographicAttributes> = (0..t)
            .map(|_| {
                let mut bins = [0u16; 8];
                for (i, c) in counts.iter().enumerate() {
                    bins[i] = rng.gen_range(0..*c as u16);
                }
                TypographicAttributes::from_array(bins)
            })
            .collect();
        let bg = Raster::filled(8, 8, Rgb([rng.gen(), rng.gen(), rng.gen()])).map_err(e)?;
        let mut doc = DesignDocument {
            id: format!("fuzz-{case}&<id>"),
            canvas: CanvasSpec {
                width: w,
                height: h,
                background: Arc::new(bg),
                background_path: "bg \"1\".ppm".into(),
                aspect_bin: 0,
                numtext_bin: 0,
            },
            elements,
            labels: None,
        };
        doc.sort_raster();
        doc.validate().map_err(|err| format!("case {case}: generated invalid doc: {err}"))?;
        let mut spec = RenderSpec::new(&doc, &labels, &cb);
        spec.background = match case % 3 {
            0 => BackgroundMode::Embed,
            1 => BackgroundMode::Link(doc.canvas.background_path.clone()),
            _ => BackgroundMode::None,
        };
        let svg = render_svg(&spec).map_err(|err| format!("case {case}: {err}"))?;
        roxmltree::Document::parse(&svg).map_err(|err| format!("case {case}: malformed SVG: {err}"))?;
        let back = roundtrip_labels(&svg).map_err(|err| format!("case {case}: {err}"))?;
        let expect: Vec<RawTypography> = labels.iter().map(|l| cb.decode_attributes(l).unwrap()).collect();
        ensure(back.len() == expect.len(), || format!("case {case}: {} of {t} elements", back.len()))?;
        for (i, (b, x)) in back.iter().zip(&expect).enumerate() {
            let close = |p: f64, q: f64| (p - q).abs() <= RENDER_TOL * q.abs().max(1.0);
            let same = b.font == x.font
                && b.color == x.color
                && b.alignment == x.alignment
                && b.capitalization == x.capitalization
                && close(b.font_size, x.font_size)
                && close(b.angle, x.angle)
                && close(b.letter_spacing, x.letter_spacing)
                && close(b.line_spacing, x.line_spacing);
            ensure(same, || format!("case {case} element {i}: {b:?} != {x:?}"))?;
        }
    }
    Ok(format!("{RENDER_CASES} fuzzed specs render to well-formed SVG and round-trip their labels"))
}

// ---------------------------------------------------------------------------

fn report(name: &str, what: &str, outcome: std::thread::Result<Outcome>, failed: &mut Vec<String>) {
    let line = match outcome {
        Ok(Ok(detail)) => format!("{name} PASS  {what}: {detail}"),
        Ok(Err(detail)) => {
            failed.push(name.to_string());
            format!("{name} FAIL  {what}: {detail}")
        }
        Err(panic) => {
            failed.push(name.to_string());
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            format!("{name} FAIL  {what}: panicked: {msg}")
        }
    };
    println!("{line}");
}

fn main() {
    // `cargo test -- --list` and filters from the default harness.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut failed = Vec::new();
    let mut run = |name: &str, what: &str, f: &dyn Fn() -> Outcome| {
        if wanted(name) {
            report(name, what, catch_unwind(AssertUnwindSafe(f)), &mut failed);
        }
    };
    run("A1", "gradient check", &a1_gradient_check);
    run("A2", "overfit sanity", &a2_overfit);
    if wanted("A3") || wanted("A4") {
        match catch_unwind(trend_rows) {
            Ok(Ok((rows, n, elapsed))) => {
                run("A3", "structure trend", &|| a3_trend(&rows, n, elapsed));
                run("A4", "diversity monotonicity", &|| a4_diversity(&rows));
            }
            other => {
                let err = match other {
                    Ok(Err(m)) => m,
                    _ => "training panicked".into(),
                };
                run("A3", "structure trend", &|| Err(err.clone()));
                run("A4", "diversity monotonicity", &|| Err(err.clone()));
            }
        }
    }
    run("A5", "sampler units", &a5_top_p);
    run("A6", "structure preservation", &a6_invariant);
    run("A7", "CIEDE2000", &a7_ciede2000);
    run("A8", "metric oracles", &a8_metrics);
    run("A9", "determinism", &a9_determinism);
    run("A10", "quantizer", &a10_quantizer);
    run("A11", "renderer", &a11_render);
    if !failed.is_empty() {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

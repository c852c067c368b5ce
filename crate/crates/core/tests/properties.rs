use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;
use typogen_core::color::{Lab, Rgb};
use typogen_core::doc_model::{CanvasRecord, DocumentRecord, ElementRecord, Raster, RawTypography};
use typogen_core::metrics::{ciede2000, diversity_score, structure_score};
use typogen_core::quantizer::{fit_kmeans_1d, CodebookSet};
use typogen_core::render::{render_svg, roundtrip_labels, BackgroundMode, RenderSpec};
use typogen_core::sampling::{argmax, draw, linkage, top_p_filter};
use typogen_core::Attribute;

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    vec(0.0f64..1.0, 1..40).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-9).then(|| w.iter().map(|x| x / s).collect())
    })
}

fn labels(max_label: u16) -> impl Strategy<Value = Vec<u16>> {
    vec(0..max_label, 0..12)
}

proptest! {
    #[test]
    fn top_p_keeps_a_valid_distribution(probs in distribution(), p in 0.001f64..=1.0) {
        let kept = top_p_filter(&probs, p).unwrap();
        prop_assert!((kept.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let top = argmax(&probs) as usize;
        prop_assert!(kept[top] > 0.0);
        prop_assert_eq!(argmax(&kept) as usize, top);
        let kept_mass: f64 = probs.iter().zip(&kept).filter(|(_, k)| **k > 0.0).map(|(q, _)| q).sum();
        let min_kept = probs.iter().zip(&kept).filter(|(_, k)| **k > 0.0).map(|(q, _)| *q).fold(f64::INFINITY, f64::min);
        for (q, k) in probs.iter().zip(&kept) {
            if *k == 0.0 {
                // Dropped labels are never more likely than kept ones.
                prop_assert!(*q <= min_kept);
            } else {
                prop_assert!((k * kept_mass - q).abs() < 1e-9);
            }
        }
        // Smallest prefix reaching p: without its last label it falls short.
        prop_assert!(kept_mass >= p - 1e-9);
        prop_assert!(kept_mass - min_kept < p + 1e-9);
    }

    #[test]
    fn top_p_support_grows_with_p(probs in distribution(), a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = top_p_filter(&probs, lo).unwrap();
        let large = top_p_filter(&probs, hi).unwrap();
        for (s, l) in small.iter().zip(&large) {
            prop_assert!(*s == 0.0 || *l > 0.0);
        }
    }

    #[test]
    fn draw_lands_in_support(probs in distribution(), p in 0.01f64..=1.0, u in 0.0f64..1.0) {
        let kept = top_p_filter(&probs, p).unwrap();
        prop_assert!(kept[draw(&kept, u) as usize] > 0.0);
    }

    #[test]
    fn structure_score_ignores_label_names(pred in labels(5), shift in 1u16..100) {
        let truth: Vec<u16> = pred.iter().rev().copied().collect();
        let renamed: Vec<u16> = pred.iter().map(|l| (l * 7 + shift) % 1000).collect();
        prop_assert_eq!(structure_score(&pred, &truth).unwrap(), structure_score(&renamed, &truth).unwrap());
        let linked: Vec<u16> = linkage(&pred).into_iter().map(|c| c as u16).collect();
        prop_assert_eq!(structure_score(&pred, &truth).unwrap(), structure_score(&linked, &truth).unwrap());
    }

    #[test]
    fn structure_score_is_bounded_and_symmetric(pred in labels(4), seed in any::<u64>()) {
        let truth: Vec<u16> = pred.iter().enumerate().map(|(i, l)| ((*l as u64 ^ seed.rotate_left(i as u32)) % 3) as u16).collect();
        let s = structure_score(&pred, &truth).unwrap();
        if pred.len() < 2 {
            prop_assert_eq!(s, None);
        } else {
            let s = s.unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
            prop_assert_eq!(Some(s), structure_score(&truth, &pred).unwrap());
            prop_assert_eq!(structure_score(&pred, &pred).unwrap(), Some(100.0));
        }
    }

    #[test]
    fn diversity_is_bounded(n in 1usize..12, t in 1usize..8, seed in any::<u64>()) {
        let samples: Vec<Vec<u16>> = (0..n)
            .map(|i| (0..t).map(|j| ((seed >> ((i + j) % 60)) % 4) as u16).collect())
            .collect();
        let d = diversity_score(&samples).unwrap();
        prop_assert!(d >= 100.0 / n as f64 - 1e-9 && d <= 100.0 + 1e-9);
        let constant = vec![samples[0].clone(); n];
        prop_assert!((diversity_score(&constant).unwrap() - 100.0 / n as f64).abs() < 1e-9);
    }

    #[test]
    fn ciede_is_symmetric_and_non_negative(
        l1 in 0.0f64..100.0, a1 in -128.0f64..128.0, b1 in -128.0f64..128.0,
        l2 in 0.0f64..100.0, a2 in -128.0f64..128.0, b2 in -128.0f64..128.0,
    ) {
        let (x, y) = (Lab::new(l1, a1, b1), Lab::new(l2, a2, b2));
        let d = ciede2000(&x, &y);
        prop_assert!(d >= 0.0 && d.is_finite());
        prop_assert!((d - ciede2000(&y, &x)).abs() < 1e-9);
        prop_assert!(ciede2000(&x, &x).abs() < 1e-12);
    }

    #[test]
    fn kmeans_encodes_to_nearest_centroid(values in vec(-50.0f64..50.0, 1..200), k in 1usize..20, seed in any::<u64>()) {
        let (cb, report) = fit_kmeans_1d("font_size", &values, k, seed).unwrap();
        prop_assert!(cb.k <= k && cb.k >= 1);
        prop_assert!(cb.centroids.windows(2).all(|w| w[0] < w[1]));
        for w in report.sse.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        for &v in &values {
            let bin = cb.encode(v);
            let c = cb.decode(bin).unwrap();
            prop_assert!(cb.centroids.iter().all(|o| (v - c).abs() <= (v - o).abs() + 1e-12));
            prop_assert_eq!(cb.encode(c), bin);
        }
    }

    #[test]
    fn rgb_lab_roundtrip(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
        let c = Rgb([r, g, b]);
        prop_assert_eq!(c.to_lab().to_rgb(), c);
        prop_assert_eq!(Rgb::from_hex(&c.hex()), Some(c));
    }
}

fn codebooks() -> &'static CodebookSet {
    use std::sync::OnceLock;
    static CB: OnceLock<CodebookSet> = OnceLock::new();
    CB.get_or_init(|| {
        let docs = typogen_core::corpus::generate_synthetic(&typogen_core::corpus::GeneratorConfig {
            num_documents: 40,
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        CodebookSet::fit(&docs, 1).unwrap()
    })
}

fn any_text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ]{1,20}",
        "[<>&\"' ;]{1,10}",
        "\\PC{1,12}",
        "[a-z]{1,8}\n[a-z]{1,8}",
    ]
    .prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rendered_svg_roundtrips(texts in vec(any_text(), 1..6), bins in vec(any::<[u16; 8]>(), 6), bg in 0usize..3) {
        let cb = codebooks();
        let (width, height) = (640, 480);
        let elements: Vec<ElementRecord> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| ElementRecord {
                text: t.clone(),
                center_x: 40.0 + 90.0 * i as f64,
                center_y: 30.0 + 70.0 * i as f64,
                ..Default::default()
            })
            .collect();
        let doc = DocumentRecord {
            id: "fuzz".into(),
            canvas: CanvasRecord { width, height, background_path: "bg.png".into() },
            elements,
        }
        .into_document(Arc::new(Raster::filled(8, 6, Rgb([250, 250, 240])).unwrap()))
        .unwrap();
        let labels: Vec<_> = bins
            .iter()
            .take(doc.len())
            .map(|b| {
                let mut bins = *b;
                for a in Attribute::ALL {
                    bins[a.index()] %= cb.label_count(a) as u16;
                }
                typogen_core::TypographicAttributes::from_array(bins)
            })
            .collect();
        let mut spec = RenderSpec::new(&doc, &labels, cb);
        spec.background = [BackgroundMode::Embed, BackgroundMode::Link("bg.png".into()), BackgroundMode::None][bg].clone();
        let svg = render_svg(&spec).unwrap();
        prop_assert!(roxmltree::Document::parse(&svg).is_ok());
        let back = roundtrip_labels(&svg).unwrap();
        let want: Vec<RawTypography> = labels.iter().map(|l| cb.decode_attributes(l).unwrap()).collect();
        prop_assert_eq!(back, want);
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn typogen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_typogen"))
        .args(args)
        .current_dir(dir)
        .env_remove("TYPOGEN_CORPUS")
        .env_remove("TYPOGEN_CODEBOOKS")
        .env_remove("TYPOGEN_CHECKPOINT")
        .output()
        .expect("spawn typogen")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = typogen(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const DATA: [&str; 4] = ["--corpus", "data/documents.jsonl", "--codebooks", "codebooks.json"];

fn with_data<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(DATA);
    v.extend(rest);
    v
}

/// Generated corpus, codebooks and a briefly trained checkpoint.
fn workspace() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        ok(p, &["gen-synthetic", "--out", "data", "-n", "50", "--seed", "1"]);
        ok(p, &["fit-codebooks", "--corpus", "data/documents.jsonl", "--out", "codebooks.json"]);
        ok(p, &with_data("train", &["--out", "model.ckpt", "--epochs", "1", "--seed", "2"]));
        dir
    })
    .path()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = typogen(dir.path(), &["sample", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));
    assert_eq!(typogen(dir.path(), &["sample", "--p", "font=2"]).status.code(), Some(2));
    assert_eq!(typogen(dir.path(), &["sample", "--lock", "font"]).status.code(), Some(2));
    assert_eq!(typogen(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = typogen(dir.path(), &["fit-codebooks", "--corpus", "missing.jsonl", "--out", "cb.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    // Nothing says where the corpus is.
    let out = typogen(dir.path(), &["predict"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("bad.toml"), "[server]\nport = 1\n").unwrap();
    let out = typogen(dir.path(), &["--config", "bad.toml", "predict"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("port"));
}

#[test]
fn predictions_score_like_direct_eval() {
    let p = workspace();
    let preds = ok(p, &with_data("predict", &["--checkpoint", "model.ckpt"]));
    let lines: Vec<Value> = preds.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    std::fs::write(p.join("preds.jsonl"), &preds).unwrap();
    let via_file: Value = serde_json::from_str(&ok(p, &with_data("eval", &["--predictions", "preds.jsonl"]))).unwrap();
    let direct: Value = serde_json::from_str(&ok(p, &with_data("eval", &["--checkpoint", "model.ckpt"]))).unwrap();
    assert_eq!(via_file, direct);
}

#[test]
fn truth_as_prediction_is_perfect() {
    let p = workspace();
    let cb = typogen_core::quantizer::CodebookSet::load(&p.join("codebooks.json")).unwrap();
    let docs = typogen_core::doc_model::load_documents(&p.join("data/documents.jsonl"), &cb).unwrap();
    let mut jsonl = String::new();
    for d in &docs {
        let labels = d.label_bins().unwrap();
        let line = serde_json::json!({
            "doc_id": d.id,
            "labels": labels,
            "clusters": typogen_core::sampling::cluster_by_linkage(&labels),
        });
        jsonl += &format!("{line}\n");
    }
    std::fs::write(p.join("truth.jsonl"), jsonl).unwrap();
    let report: Value = serde_json::from_str(&ok(
        p,
        &with_data("eval", &["--predictions", "truth.jsonl", "--split", "all", "--basis", "decoded"]),
    ))
    .unwrap();
    assert_eq!(report["documents"], 50);
    for attr in ["font", "alignment", "capitalization"] {
        assert_eq!(report["accuracy"][attr], 100.0, "{attr}");
    }
    assert_eq!(report["color_diff"], 0.0);
    for attr in ["font", "color", "font_size"] {
        assert_eq!(report["structure"][attr], 100.0, "{attr}");
    }
}

#[test]
fn mode_baseline_table() {
    let p = workspace();
    let table = ok(p, &with_data("eval", &["--mode-baseline", "--format", "table"]));
    assert!(table.contains("font"), "{table}");
    assert!(table.lines().count() > 8, "{table}");
}

#[test]
fn sweep_csv_has_every_point() {
    let p = workspace();
    let csv = ok(p, &with_data("sweep", &["--checkpoint", "model.ckpt", "-n", "3", "--limit", "3"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mode,p,attribute,attribute_metric,structure,diversity"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 4 * 8);
    for mode in ["plain", "structure_preserved"] {
        for attr in ["font", "color", "angle"] {
            let ps: Vec<&str> = rows.iter().filter(|r| r[0] == mode && r[2] == attr).map(|r| r[1]).collect();
            assert_eq!(ps.len(), 4, "{mode} {attr}");
        }
    }
}

#[test]
fn sample_then_render() {
    let p = workspace();
    let doc_id = {
        let first = std::fs::read_to_string(p.join("data/documents.jsonl")).unwrap();
        let v: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        v["id"].as_str().unwrap().to_string()
    };
    let set = ok(
        p,
        &with_data(
            "sample",
            &["--checkpoint", "model.ckpt", "--doc-id", &doc_id, "-n", "4", "--lock", "color:0=5", "--out", "s/set.json"],
        ),
    );
    assert!(set.is_empty());
    let set: Value = serde_json::from_str(&std::fs::read_to_string(p.join("s/set.json")).unwrap()).unwrap();
    assert_eq!(set["samples"].as_array().unwrap().len(), 4);
    assert_eq!(set["doc_id"], doc_id.as_str());
    let clusters = set["clusters"]["assignments"]["color"].as_array().unwrap();
    for s in set["samples"].as_array().unwrap() {
        for (t, c) in clusters.iter().enumerate() {
            if c == 0 {
                assert_eq!(s[t][1], 5);
            }
        }
    }

    let svg = ok(p, &with_data("render", &["--doc-id", &doc_id, "--samples", "s/set.json", "--sample-index", "3"]));
    let parsed = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(parsed.root_element().tag_name().name(), "svg");
    let linked = ok(p, &with_data("render", &["--doc-id", &doc_id, "--link-background"]));
    assert!(linked.contains("backgrounds/"), "{linked}");
    let top1 = ok(p, &with_data("render", &["--doc-id", &doc_id, "--top1", "--checkpoint", "model.ckpt"]));
    assert!(roxmltree::Document::parse(&top1).is_ok());
}

#[test]
fn config_file_and_env_supply_paths() {
    let p = workspace();
    let dir = tempfile::tempdir().unwrap();
    let abs = |f: &str| -> PathBuf { p.join(f) };
    let toml = format!(
        "[paths]\ncorpus = {:?}\ncodebooks = {:?}\ncheckpoint = {:?}\n",
        abs("data/documents.jsonl"),
        abs("codebooks.json"),
        abs("model.ckpt"),
    );
    std::fs::write(dir.path().join("typogen.toml"), toml).unwrap();
    let from_config = ok(dir.path(), &["--config", "typogen.toml", "predict"]);
    assert_eq!(from_config, ok(p, &with_data("predict", &["--checkpoint", "model.ckpt"])));

    let out = Command::new(env!("CARGO_BIN_EXE_typogen"))
        .args(["--config", "typogen.toml", "predict"])
        .current_dir(dir.path())
        .env("TYPOGEN_CHECKPOINT", "elsewhere.ckpt")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("elsewhere.ckpt"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ordmeta::cli::{MANIFEST_FILE, PARTIAL_MARKER};

fn ordmeta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordmeta")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ordmeta(args);
    assert!(
        out.status.success(),
        "ordmeta {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ordmeta(args).status.code().unwrap()
}

/// Small, fast experiment: 30 subjects, 6 ROIs, one LR setting.
fn small_config(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "data": "data",
        "output": "out",
        "seed": seed,
        "k_folds": 3,
        "val_fraction": 0.1,
        "window_length": 60,
        "stride": 20,
        "grids": { "lr": [{ "kind": "lr", "l2": 0.1 }] },
        "meta": { "epochs": 300 },
        "synth": {
            "n_subjects": 30,
            "rois": 6,
            "time_points": 120,
            "signal_pairs": [[0, 1], [2, 3]],
            "seed": seed
        },
        "generalize": { "k_folds": 3 }
    });
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--jobs", "0", "synth"]), 1);
    assert_eq!(code(&["generalize", "--models", "x", "--method", "3"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "seed": 1, "window_lenght": 90 }"#).unwrap();
    let out = ordmeta(&["--config", s(&bad), "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window_lenght"));
    fs::write(&bad, r#"{ "k_folds": 1 }"#).unwrap();
    assert_eq!(code(&["--config", s(&bad), "synth"]), 1);
}

#[test]
fn missing_data_exits_two_and_leaves_marker() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nowhere");
    let o = ordmeta(&["crossval", "--data", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let marker = fs::read_to_string(out.join(PARTIAL_MARKER)).unwrap();
    assert!(!marker.is_empty());
    assert!(out.join(MANIFEST_FILE).exists());
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--config", s(&cfg), "synth", "--out", s(&a)]);
    ok(&["--config", s(&cfg), "synth", "--out", s(&b)]);
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("phenotypes.csv")));
    assert_eq!(ta, tb);
    assert!(!a.join(PARTIAL_MARKER).exists());

    let described = ok(&["describe", "--data", s(&a)]);
    assert!(described.lines().count() >= 2, "{described}");
}

#[test]
fn crossval_predict_and_generalize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let c = s(&cfg);
    ok(&["--config", c, "synth"]);
    let table = ok(&["--config", c, "crossval"]);
    assert!(table.contains("lr/metamodel"), "{table}");
    let out = dir.path().join("out");
    assert!(!out.join(PARTIAL_MARKER).exists());

    let csv = fs::read_to_string(out.join("crossval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("fold,base_kind,pipeline,r"));
    assert_eq!(lines.count(), 3 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    // predict with one stored fold model, twice
    let model = out.join("models/fold_0/lr/metamodel");
    let data = dir.path().join("data");
    let (p1, p2) = (dir.path().join("p1.csv"), dir.path().join("p2.csv"));
    ok(&["predict", "--models", s(&model), "--data", s(&data), "--out", s(&p1)]);
    ok(&["predict", "--models", s(&model), "--data", s(&data), "--out", s(&p2)]);
    let pred = fs::read_to_string(&p1).unwrap();
    assert_eq!(pred.lines().next(), Some("subject_id,predicted_score"));
    assert_eq!(pred.lines().count(), 31);
    assert_eq!(pred, fs::read_to_string(&p2).unwrap());
    assert_eq!(
        code(&["predict", "--models", s(&out), "--data", s(&data), "--out", s(&p2)]),
        1,
        "a crossval root is not a metamodel directory"
    );

    // a second cohort from another seed
    let new = dir.path().join("new");
    let other = dir.path().join("other");
    fs::create_dir_all(&other).unwrap();
    let cfg2 = small_config(&other, 9);
    ok(&["--config", s(&cfg2), "synth", "--out", s(&new)]);

    let before = tree_bytes(&out.join("models"));
    let g1 = dir.path().join("g1");
    ok(&["--config", c, "generalize", "--models", s(&out), "--data", s(&new), "--method", "1", "--out", s(&g1)]);
    let g1csv = fs::read_to_string(g1.join("generalize.csv")).unwrap();
    assert_eq!(g1csv.lines().next(), Some("model,base_kind,pipeline,r"));
    assert_eq!(g1csv.lines().count(), 1 + 3 * 2);

    let g2 = dir.path().join("g2");
    ok(&["--config", c, "generalize", "--models", s(&out), "--data", s(&new), "--method", "2", "--out", s(&g2)]);
    let g2csv = fs::read_to_string(g2.join("generalize.csv")).unwrap();
    assert_eq!(g2csv.lines().next(), Some("fold,base_kind,pipeline,r"));
    let summary = fs::read_to_string(g2.join("summary.json")).unwrap();
    assert!(summary.contains("pooled"), "{summary}");
    // the frozen bank is read, never rewritten
    assert_eq!(before, tree_bytes(&out.join("models")));
}

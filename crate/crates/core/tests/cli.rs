use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use wca_core::fixtures::{gen_fixtures, BENCH_NOISY, CLASSIFY_01};

fn wca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wca"))
        .args(args)
        .env_remove("WCA_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fx {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fx {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        gen_fixtures(0, tmp.path()).unwrap();
        let root = tmp.path().to_path_buf();
        Fx { _tmp: tmp, root }
    }

    fn file(&self, fixture: &str, name: &str) -> PathBuf {
        self.root.join(fixture).join(name)
    }
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_reports_fixture_accuracy() {
    let fx = Fx::new();
    let out = wca(&[
        "eval",
        "--manifest",
        p(&fx.file(BENCH_NOISY, "manifest.jsonl")),
        "--embeddings",
        p(&fx.file(BENCH_NOISY, "embeddings.wem1")),
        "--descriptions",
        p(&fx.file(BENCH_NOISY, "descriptions.json")),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["n"], 200);
    assert!((v["top1"].as_f64().unwrap() - 0.775).abs() < 1e-12);
    assert_eq!(v["seed"], 0);
    assert_eq!(v["per_class"].as_object().unwrap().len(), 10);
}

#[test]
fn classify_explain_rows_sum_to_score() {
    let fx = Fx::new();
    let out = wca(&[
        "classify",
        "--embeddings",
        p(&fx.file(CLASSIFY_01, "embeddings.wem1")),
        "--descriptions",
        p(&fx.file(CLASSIFY_01, "descriptions.json")),
        "--id",
        "heron.png",
        "--explain",
    ]);
    let v = stdout_json(&out);
    let report = &v[0];
    assert_eq!(report["predicted_label"], "heron");
    let explanation = report["explanation"].as_array().unwrap();
    assert_eq!(explanation.len(), 2);
    for class in explanation {
        let total: f64 = class["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["contribution"].as_f64().unwrap())
            .sum();
        assert!((total - class["score"].as_f64().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn usage_errors_exit_one() {
    let fx = Fx::new();
    let emb = fx.file(CLASSIFY_01, "embeddings.wem1");
    let desc = fx.file(CLASSIFY_01, "descriptions.json");

    let out = wca(&["classify", "--embeddings", p(&emb), "--descriptions", p(&desc), "--id", "heron.png", "--lambda", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--agg"));

    let out = wca(&["classify", "--embeddings", p(&emb), "--model", "synthetic", "--descriptions", p(&desc)]);
    assert_eq!(out.status.code(), Some(1));

    let out = wca(&["classify", "--descriptions", p(&desc), "--id", "heron.png"]);
    assert_eq!(out.status.code(), Some(1));

    let out = wca(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    let out = wca(&[
        "classify", "--embeddings", p(&emb), "--descriptions", p(&desc), "--id", "heron.png", "--agg", "clip", "--explain",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn io_errors_exit_two() {
    let fx = Fx::new();
    let out = wca(&[
        "classify",
        "--embeddings",
        p(&fx.root.join("missing.wem1")),
        "--descriptions",
        p(&fx.file(CLASSIFY_01, "descriptions.json")),
        "--id",
        "heron.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.wem1"));

    let bad = fx.root.join("bad.wem1");
    fs::write(&bad, b"WEM2\0\0\0\0").unwrap();
    let out = wca(&[
        "classify",
        "--embeddings",
        p(&bad),
        "--descriptions",
        p(&fx.file(CLASSIFY_01, "descriptions.json")),
        "--id",
        "heron.png",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(wca(&["--help"]).status.code(), Some(0));
    assert_eq!(wca(&["eval", "--help"]).status.code(), Some(0));
}

#[test]
fn cache_round_trip_matches_direct_scores() {
    let fx = Fx::new();
    let emb = fx.file(BENCH_NOISY, "embeddings.wem1");
    let desc = fx.file(BENCH_NOISY, "descriptions.json");
    let manifest = fx.file(BENCH_NOISY, "manifest.jsonl");
    let cache = fx.root.join("aug.wem1");

    let out = wca(&["cache", "--manifest", p(&manifest), "--embeddings", p(&emb), "--descriptions", p(&desc), "--cache", p(&cache)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cache.exists());

    let direct = stdout_json(&wca(&["eval", "--manifest", p(&manifest), "--embeddings", p(&emb), "--descriptions", p(&desc)]));
    let cached = stdout_json(&wca(&[
        "eval", "--manifest", p(&manifest), "--embeddings", p(&emb), "--descriptions", p(&desc), "--cache", p(&cache),
    ]));
    assert_eq!(direct["top1"], cached["top1"]);
    let a = direct["predictions"].as_array().unwrap();
    let b = cached["predictions"].as_array().unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x["predicted"], y["predicted"]);
        assert!((x["score"].as_f64().unwrap() - y["score"].as_f64().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn gen_fixtures_overwrites_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("fx");
    for _ in 0..2 {
        let out = wca(&["gen-fixtures", "--seed", "3", "--out", p(&dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = fs::read(dir.join(BENCH_NOISY).join("embeddings.wem1")).unwrap();
    let other = tmp.path().join("fx2");
    assert!(wca(&["gen-fixtures", "--seed", "3", "--out", p(&other)]).status.success());
    assert_eq!(first, fs::read(other.join(BENCH_NOISY).join("embeddings.wem1")).unwrap());
    assert!(dir.join(CLASSIFY_01).join("oracle.json").exists());
}

#[test]
fn theorem_command_reports_summary() {
    let v = stdout_json(&wca(&["theorem", "--trials", "300", "--dim", "6", "--seed", "11"]));
    assert_eq!(v["trials"], 300);
    assert_eq!(v["violations"], 0);
    assert!(v["max_cos"].as_f64().unwrap() < 1.0);
    assert_eq!(v["shrink_monotone"], true);
}

#[test]
fn bench_writes_csv_for_synthetic_model() {
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("sample.png");
    image::RgbImage::from_fn(80, 60, |x, y| image::Rgb([(x * 3) as u8, (y * 4) as u8, 40]))
        .save(&png)
        .unwrap();
    let csv = tmp.path().join("bench.csv");
    let out = wca(&["bench", "--image", p(&png), "--model", "synthetic:8", "--n", "0,5,10", "--out", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "N,crop_preprocess_s,encode_s,total_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("10,"));
}

#[test]
fn classify_image_file_with_synthetic_model() {
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("tile.png");
    image::RgbImage::from_fn(64, 64, |x, y| image::Rgb([(x * 4) as u8, 255 - (y * 3) as u8, ((x + y) * 2) as u8]))
        .save(&png)
        .unwrap();
    let desc = tmp.path().join("d.json");
    fs::write(&desc, r#"{"cat": ["whiskers", "fur"], "car": ["wheels", "doors", "headlights"]}"#).unwrap();
    let args = ["classify", "--model", "synthetic:16", "--descriptions", p(&desc), "--image", p(&png), "--crops", "6"];
    let a = stdout_json(&wca(&args));
    let b = stdout_json(&wca(&args));
    assert_eq!(a, b);
    assert_eq!(a[0]["per_class_scores"].as_object().unwrap().len(), 2);
}

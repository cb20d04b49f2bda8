//! End-to-end runs of the `cartoseg` binary on small synthetic data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cartoseg::data::manifest::{DatasetManifest, Role};
use cartoseg::data::raster::{read_mask, read_rgb, write_rgb};
use cartoseg::data::synth::{synth_scan, SynthClass};
use serde_json::{json, Value};

fn cartoseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cartoseg"))
        .args(args)
        .env("CARTOSEG_TEST_MODE", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cartoseg(args);
    assert!(
        out.status.success(),
        "cartoseg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) {
    ok(&["synth", "--out", s(dir), "--count", &count.to_string(), "--seed", &seed.to_string()]);
}

fn toy_config(dir: &Path, data: &Path, out: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "encoder": {"preset": "tiny", "init_seed": 3},
        "input_scale": 0.25,
        "epochs": 6,
        "batch_size": 4,
        "seed": 11,
        "runs": 1,
        "manifest": data.join("manifest.json"),
        "output_dir": dir.join(out),
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join(format!("{out}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn synth_writes_split_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    synth(&a, 40, 5);
    let m = DatasetManifest::load(a.join("manifest.json")).unwrap();
    let counts: Vec<_> = [Role::Train, Role::Val, Role::Test].iter().map(|&r| m.split(r).len()).collect();
    assert_eq!(counts, [28, 4, 8]);
    let first = m.load_record(&m.samples[0]).unwrap();
    assert_eq!(first.image.dim(), (224, 224, 3));

    let b = tmp.path().join("b");
    synth(&b, 40, 5);
    for r in &m.samples {
        for p in [&r.image, &r.mask] {
            assert_eq!(std::fs::read(a.join(p)).unwrap(), std::fs::read(b.join(p)).unwrap(), "{p:?}");
        }
    }
}

#[test]
fn synth_refuses_non_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    synth(&d, 10, 0);
    let again = cartoseg(&["synth", "--out", s(&d), "--count", "10"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["synth", "--out", s(&d), "--count", "10", "--force"]);
}

#[test]
fn synth_rejects_unknown_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cartoseg(&["synth", "--out", s(tmp.path()), "--class", "rivers"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rivers"));
}

#[test]
fn train_is_deterministic_and_reduces_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 40, 1);
    let few = json!({"few_shot": {"k": 8, "seed": 2}});
    let c1 = toy_config(tmp.path(), &data, "one", few.clone());
    let c2 = toy_config(tmp.path(), &data, "two", few);
    ok(&["train", "--config", s(&c1)]);
    ok(&["train", "--config", s(&c2), "--threads", "4"]);

    let run = |name: &str| tmp.path().join(name).join("run-0");
    for f in ["best.safetensors", "last.safetensors", "train_log.json"] {
        assert_eq!(std::fs::read(run("one").join(f)).unwrap(), std::fs::read(run("two").join(f)).unwrap(), "{f}");
    }
    let log: Value = serde_json::from_slice(&std::fs::read(run("one").join("train_log.json")).unwrap()).unwrap();
    let epochs = log["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 6);
    assert_eq!(log["train_ids"].as_array().unwrap().len(), 8);
    let first = epochs[0]["train_loss"].as_f64().unwrap();
    let last = epochs[5]["train_loss"].as_f64().unwrap();
    assert!(last < first, "loss {first} -> {last}");
    assert!(tmp.path().join("one/config.json").exists());
}

#[test]
fn train_rejects_oversized_shot_count_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 10, 1);
    let cfg = toy_config(tmp.path(), &data, "big", json!({"few_shot": {"k": 50, "seed": 0}}));
    let out = cartoseg(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    assert!(!tmp.path().join("big").exists());
}

#[test]
fn evaluate_runs_with_panoptic_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 20, 4);
    let cfg = toy_config(tmp.path(), &data, "ev", json!({"epochs": 2, "runs": 2, "adapter": {"method": "none"}}));
    ok(&["train", "--config", s(&cfg)]);
    let stdout = ok(&["evaluate", "--config", s(&cfg), "--panoptic", "--runs", "2"]);
    assert!(stdout.contains("PQ"), "{stdout}");
    assert!(stdout.contains("mean±std"), "{stdout}");

    let out = tmp.path().join("ev");
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert!(runs.starts_with("run,f1,iou,pq\n"));
    assert_eq!(runs.lines().count(), 4);
    let per_image = std::fs::read_to_string(out.join("eval-run-0.csv")).unwrap();
    // Header, four test images, pooled row.
    assert_eq!(per_image.lines().count(), 6);
    assert!(per_image.lines().last().unwrap().starts_with("all,"));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("eval-run-1.json")).unwrap()).unwrap();
    assert!(report["panoptic"]["pq"].is_number());
}

#[test]
fn predict_full_size_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 10, 2);
    let cfg = toy_config(tmp.path(), &data, "pr", json!({"epochs": 1}));
    ok(&["train", "--config", s(&cfg)]);
    let scan = synth_scan(9, 896, 700, SynthClass::LinearFeatures);
    let input = tmp.path().join("scan.png");
    write_rgb(&input, &scan.image).unwrap();
    let ck = tmp.path().join("pr/run-0/best.safetensors");
    let a = tmp.path().join("a.png");
    let b = tmp.path().join("b.png");
    for out in [&a, &b] {
        ok(&["predict", "--checkpoint", s(&ck), "--input", s(&input), "--output", s(out), "--config", s(&cfg)]);
    }
    assert_eq!(read_mask(&a).unwrap().dim(), (896, 700));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn viz_renders_feature_pca() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 10, 3);
    let cfg = toy_config(tmp.path(), &data, "vz", json!({}));
    let m = DatasetManifest::load(data.join("manifest.json")).unwrap();
    let input = data.join(&m.samples[0].image);
    let out = tmp.path().join("pca.png");
    ok(&["viz", "--config", s(&cfg), "--input", s(&input), "--output", s(&out)]);
    let rgb = read_rgb(&out).unwrap();
    assert_eq!(rgb.dim().2, 3);
    assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
    let missing = cartoseg(&["viz", "--input", s(&input), "--output", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
}

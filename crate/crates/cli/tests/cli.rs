use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use skelnet::dataset::{read_gray_png, Manifest, Split};
use skelnet::gt::skeletonize;
use skelnet::tensor::io::{load_raw, save_raw};
use tempfile::TempDir;

fn skelnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skelnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = skelnet(args);
    assert!(
        out.status.success(),
        "skelnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_dataset(dir: &Path, train: usize, test: usize) {
    ok(&[
        "datagen",
        "--out",
        p(dir),
        "--train",
        &train.to_string(),
        "--test",
        &test.to_string(),
    ]);
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files_sorted(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = walk(dir);
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(&path)
            } else {
                vec![path]
            }
        })
        .collect()
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files_sorted(a), files_sorted(b));
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> {
        v.iter()
            .map(|f| f.strip_prefix(root).unwrap().to_path_buf())
            .collect()
    };
    assert_eq!(rel(a, &fa), rel(b, &fb));
    for (x, y) in fa.iter().zip(&fb) {
        assert!(
            std::fs::read(x).unwrap() == std::fs::read(y).unwrap(),
            "{} differs",
            x.display()
        );
    }
}

/// Writes responses equal to the ground-truth skeleton (or all zero) for the test split.
fn write_oracle_responses(data: &Path, out: &Path, empty: bool) {
    std::fs::create_dir_all(out).unwrap();
    let manifest = Manifest::load(data).unwrap();
    let mut ids = Vec::new();
    for e in manifest.split(Split::Test) {
        let mask = read_gray_png(&data.join(&e.mask))
            .unwrap()
            .map(|&v| v > 127);
        let (skel, scale) = skeletonize(&mask);
        let response: Vec<f32> = skel
            .data
            .iter()
            .map(|&s| if s && !empty { 1.0 } else { 0.0 })
            .collect();
        let mut planes = response;
        planes.extend_from_slice(&scale.data);
        planes.extend_from_slice(&scale.data);
        save_raw(
            &out.join(format!("{}.skt", e.id)),
            &[3, mask.height, mask.width],
            &planes,
        )
        .unwrap();
        ids.push(e.id.clone());
    }
    let index = serde_json::json!({
        "version": 1,
        "checkpoint": "oracle",
        "iteration": 0,
        "fsds_mode": false,
        "receptive_fields": [5, 14, 32, 68],
        "channels": ["response", "scale", "expected_scale"],
        "ids": ids,
    });
    std::fs::write(out.join("responses.json"), index.to_string()).unwrap();
}

#[test]
fn datagen_defaults_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["datagen", "--out", p(&a)]);
    let manifest = Manifest::load(&a).unwrap();
    assert_eq!(manifest.split(Split::Train).count(), 300);
    assert_eq!(manifest.split(Split::Test).count(), 100);
    let img = read_gray_png(&a.join(&manifest.samples[0].image)).unwrap();
    assert_eq!((img.width, img.height), (96, 96));

    ok(&["datagen", "--out", p(&b)]);
    assert_same_tree(&a, &b);

    let refused = skelnet(&["datagen", "--out", p(&a)]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&["--force", "datagen", "--out", p(&a)]);
    assert_same_tree(&a, &b);

    let other_seed = tmp.path().join("c");
    ok(&[
        "--seed",
        "99",
        "datagen",
        "--out",
        p(&other_seed),
        "--train",
        "2",
        "--test",
        "0",
    ]);
    let m = Manifest::load(&other_seed).unwrap();
    assert_ne!(
        std::fs::read(other_seed.join(&m.samples[0].image)).unwrap(),
        std::fs::read(a.join(&manifest.samples[0].image)).unwrap()
    );
}

#[test]
fn ribbon_skeleton_scales_respect_width_bounds() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("ribbons");
    ok(&[
        "datagen",
        "--out",
        p(&dir),
        "--shapes",
        "ribbons",
        "--train",
        "40",
        "--test",
        "0",
    ]);
    let manifest = Manifest::load(&dir).unwrap();
    let cfg = skelnet::gt::SynthConfig::default();
    let mut scales = Vec::new();
    for e in &manifest.samples {
        let mask = read_gray_png(&dir.join(&e.mask)).unwrap().map(|&v| v > 127);
        let (skel, scale) = skeletonize(&mask);
        scales.extend(
            skel.points()
                .into_iter()
                .map(|(x, y)| scale.get(x, y) as f64),
        );
    }
    assert!(!scales.is_empty());
    scales.sort_by(f64::total_cmp);
    // Skeleton ends and crossings of overlapping ribbons take smaller or
    // larger disks, so the audit uses the central 90% of skeleton pixels.
    let lo = scales[scales.len() / 20];
    let hi = scales[scales.len() * 19 / 20];
    assert!(lo >= cfg.min_width - 1.0, "5th percentile scale {lo}");
    assert!(hi <= cfg.max_width + 1.0, "95th percentile scale {hi}");
}

#[test]
fn train_infer_eval_segment_rescore_smoke() {
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 8, 8);
    let ckpt = tmp.path().join("model.ckpt");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "10",
    ]);
    assert!(ckpt.is_file());
    let losses = std::fs::read_to_string(tmp.path().join("model.loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 11);

    let again = skelnet(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "10",
    ]);
    assert!(!again.status.success());

    let responses = tmp.path().join("responses");
    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&responses),
        "--overlay",
    ]);
    let index = read_json(&responses.join("responses.json"));
    assert_eq!(index["fsds_mode"], false);
    assert_eq!(index["ids"].as_array().unwrap().len(), 8);
    assert!(responses.join("0008.overlay.png").is_file());

    let eval = tmp.path().join("eval");
    ok(&[
        "eval",
        "--responses",
        p(&responses),
        "--data",
        p(&data),
        "--out",
        p(&eval),
    ]);
    let summary = read_json(&eval.join("summary.json"));
    let f = summary["best_f"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    assert_eq!(
        std::fs::read_to_string(eval.join("pr.csv"))
            .unwrap()
            .lines()
            .count(),
        100
    );

    let segments = tmp.path().join("segments");
    ok(&[
        "segment",
        "--responses",
        p(&responses),
        "--summary",
        p(&eval.join("summary.json")),
        "--data",
        p(&data),
        "--out",
        p(&segments),
    ]);
    let seg = read_json(&segments.join("segmentation.json"));
    assert!(seg["covering"].as_f64().unwrap() >= 0.0);

    let proposals = tmp.path().join("proposals.csv");
    std::fs::write(
        &proposals,
        "x,y,w,h,score\n0,0,96,96,0.9\n10,10,20,30,0.5\n",
    )
    .unwrap();
    let gt_boxes = tmp.path().join("gt.csv");
    std::fs::write(&gt_boxes, "x,y,w,h\n10,10,20,30\n").unwrap();
    let rescored = tmp.path().join("rescored.csv");
    let rate = tmp.path().join("rate.csv");
    ok(&[
        "rescore",
        "--proposals",
        p(&proposals),
        "--segments",
        p(&segments.join("0008.segments.png")),
        "--out",
        p(&rescored),
        "--ground-truth",
        p(&gt_boxes),
        "--detection-rate",
        p(&rate),
    ]);
    let mut reader = csv::Reader::from_path(&rescored).unwrap();
    for row in reader.records() {
        let row = row.unwrap();
        let ratio: f64 = row[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&ratio));
    }
    assert!(rate.is_file());

    let pr_svg = tmp.path().join("pr.svg");
    ok(&["plot", "--pr", p(&eval.join("pr.csv")), "--out", p(&pr_svg)]);
    assert!(std::fs::read_to_string(&pr_svg)
        .unwrap()
        .starts_with("<svg"));
    let loss_svg = tmp.path().join("loss.svg");
    ok(&[
        "plot",
        "--loss",
        p(&tmp.path().join("model.loss.csv")),
        "--out",
        p(&loss_svg),
    ]);
    assert!(loss_svg.is_file());

    assert!(
        start.elapsed().as_secs() < 60,
        "smoke pipeline took {:?}",
        start.elapsed()
    );
}

#[test]
fn classification_only_runs_are_flagged() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 2, 1);
    let ckpt = tmp.path().join("fsds.ckpt");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "3",
        "--fsds",
    ]);
    let responses = tmp.path().join("r");
    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&responses),
    ]);
    assert_eq!(
        read_json(&responses.join("responses.json"))["fsds_mode"],
        true
    );
}

#[test]
fn resume_appends_to_loss_log() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 2, 1);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "4",
    ]);
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--resume",
        p(&ckpt),
        "--iterations",
        "7",
    ]);
    let log = std::fs::read_to_string(tmp.path().join("m.loss.csv")).unwrap();
    let iterations: Vec<u64> = log
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(iterations, (1..=7).collect::<Vec<_>>());
}

#[test]
fn infer_is_idempotent_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 1, 2);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "2",
    ]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&a),
    ]);
    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&b),
    ]);
    let first = std::fs::read(a.join("0001.skt")).unwrap();
    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&a),
    ]);
    assert_eq!(first, std::fs::read(a.join("0001.skt")).unwrap());
    for id in ["0001", "0002"] {
        assert_eq!(
            std::fs::read(a.join(format!("{id}.skt"))).unwrap(),
            std::fs::read(b.join(format!("{id}.skt"))).unwrap()
        );
    }

    let (dims, values) = load_raw(&a.join("0001.skt")).unwrap();
    assert_eq!(dims, vec![3, 96, 96]);
    let copy = tmp.path().join("copy.skt");
    save_raw(&copy, &dims, &values).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), first);
}

#[test]
fn constant_image_gives_near_empty_response() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 2, 0);
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&ckpt),
        "--iterations",
        "2",
    ]);
    let img = tmp.path().join("flat.png");
    image::GrayImage::new(40, 36).save(&img).unwrap();
    let out = tmp.path().join("r");
    let run = ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--images",
        p(&img),
        "--out",
        p(&out),
    ]);
    assert!(String::from_utf8_lossy(&run.stderr).contains("not a multiple"));
    let (dims, values) = load_raw(&out.join("flat.skt")).unwrap();
    assert_eq!(dims, vec![3, 36, 40]);
    let response = &values[..36 * 40];
    // A freshly initialized network has no spatial structure to respond to:
    // the response is flat, so nothing survives thinning above its level.
    let (lo, hi) = response
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    assert!(hi - lo < 0.05, "response range {lo}..{hi}");
}

#[test]
fn ground_truth_scores_one_and_empty_scores_zero() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 0, 6);
    for (empty, expected) in [(false, 1.0), (true, 0.0)] {
        let responses = tmp.path().join(format!("r{empty}"));
        write_oracle_responses(&data, &responses, empty);
        let eval = tmp.path().join(format!("e{empty}"));
        ok(&[
            "eval",
            "--responses",
            p(&responses),
            "--data",
            p(&data),
            "--out",
            p(&eval),
        ]);
        let f = read_json(&eval.join("summary.json"))["best_f"]
            .as_f64()
            .unwrap();
        assert_eq!(f, expected);
    }
}

#[test]
fn missing_responses_are_listed() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, 0, 4);
    let responses = tmp.path().join("r");
    write_oracle_responses(&data, &responses, false);
    std::fs::remove_file(responses.join("0001.skt")).unwrap();
    std::fs::remove_file(responses.join("0003.skt")).unwrap();
    let out = skelnet(&[
        "eval",
        "--responses",
        p(&responses),
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("e")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0001, 0003"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let echoed = ok(&["config"]);
    let mut v: Value = serde_json::from_slice(&echoed.stdout).unwrap();
    v["train"]["learning_rat"] = serde_json::json!(0.1);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = skelnet(&["--config", p(&cfg), "config"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

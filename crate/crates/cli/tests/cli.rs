use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use occspot_core::cloud::{LabeledCloud, Pose, Vector3};
use occspot_core::occ::read_grid;
use occspot_core::pipeline::PipelineConfig;
use occspot_core::synth::{write_sequence_dir, SequenceFrame, SequenceMeta};

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.json")
}

fn occspot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occspot"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = occspot(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Relative path → contents for every file below `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn tiny_config_file_matches_preset() {
    let cfg = PipelineConfig::from_json(&fs::read(tiny_config()).unwrap()).unwrap();
    assert_eq!(cfg, PipelineConfig::tiny());
}

#[test]
fn gen_scenes_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &["gen-scenes", "--config", cfg, "--seed", "7", "--out", out],
        );
    }
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert!(a.len() > 16 * 4);
    assert_eq!(a, b);
    ok(
        tmp.path(),
        &["gen-scenes", "--config", cfg, "--seed", "8", "--out", "c"],
    );
    assert_ne!(a, tree(&tmp.path().join("c")));
    // no staging directories left behind
    let names: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 3, "{names:?}");
}

#[test]
fn make_occ_on_one_point_gives_one_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cloud = LabeledCloud::empty(1);
    cloud.push(Vector3::new(0.5, 2.5, 0.0), &[0.5], 1).unwrap();
    let meta = SequenceMeta::new(10.0, vec![Pose::identity()]).unwrap();
    let frames = [SequenceFrame { cloud, boxes: vec![] }];
    write_sequence_dir(&tmp.path().join("seq"), &meta, &frames).unwrap();
    let cfg = tiny_config();
    ok(
        tmp.path(),
        &["make-occ", "--config", cfg.to_str().unwrap(), "seq", "occ.spog"],
    );
    let grid = read_grid(File::open(tmp.path().join("occ.spog")).unwrap()).unwrap();
    assert_eq!(grid.nonzero_count(), 1);
    let spec = grid.spec().clone();
    let cell = spec.cell_of(0.5, 2.5).unwrap();
    assert_eq!(grid.labels()[cell], 1);
    assert!(tmp.path().join("occ.spog.manifest.json").is_file());
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"pretrain": {"epocs": 3}}"#).unwrap();
    let out = occspot(tmp.path(), &["pretrain", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pretrain.epocs"));
    let out = occspot(tmp.path(), &["eval-miou", "missing.spck", "."]);
    assert_eq!(out.status.code(), Some(3));
    let out = occspot(tmp.path(), &["resample", "--factor", "2", "--seed", "0", "in", "out"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn balance_weights_prints_worked_example() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("stats.json"),
        r#"{"classes": [1, 2, 3, 4], "counts": [10, 10, 10, 70]}"#,
    )
    .unwrap();
    let out = ok(tmp.path(), &["balance-weights", "stats.json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s: Vec<f64> = serde_json::from_value(v["s"].clone()).unwrap();
    let expect = [
        (2.5f64).sqrt(),
        (2.5f64).sqrt(),
        (2.5f64).sqrt(),
        (0.25f64 / 0.7).sqrt(),
    ];
    for (a, b) in s.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn full_pipeline_smoke() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = tiny_config();
    let cfg = cfg.to_str().unwrap();
    ok(dir, &["gen-scenes", "--config", cfg]);
    ok(dir, &["pretrain", "--config", cfg]);
    ok(
        dir,
        &[
            "finetune",
            "--config",
            cfg,
            "--ckpt",
            "runs/pretrain.spck",
            "--labels",
            "4",
        ],
    );
    ok(
        dir,
        &[
            "finetune",
            "--config",
            cfg,
            "--labels",
            "4",
            "--out",
            "runs/scratch.spck",
        ],
    );
    for ckpt in ["runs/finetune.spck", "runs/scratch.spck"] {
        let out = ok(dir, &["eval-miou", ckpt, "data/eval"]);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let m = v["miou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&m));
        assert_eq!(v["scenes"], 4);
    }
    let out = ok(dir, &["theory-check", "--sweeps", "200", "--seed", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["all_hold"], true);

    // re-running a stage from its manifest inputs reproduces its outputs
    let first = fs::read(dir.join("runs/pretrain.spck")).unwrap();
    ok(dir, &["pretrain", "--config", cfg, "--out", "runs/again.spck"]);
    assert_eq!(first, fs::read(dir.join("runs/again.spck")).unwrap());
    let m1: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("runs/pretrain.spck.manifest.json")).unwrap()).unwrap();
    let m2: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("runs/again.spck.manifest.json")).unwrap()).unwrap();
    assert_eq!(m1["config_sha256"], m2["config_sha256"]);
    assert_eq!(m1["inputs"], m2["inputs"]);
    assert_eq!(m1["outputs"][0]["sha256"], m2["outputs"][0]["sha256"]);
    assert!(start.elapsed() < Duration::from_secs(300));
}

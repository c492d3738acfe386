use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posecast_core::model::{save_checkpoint, Checkpoint, Model, ModelConfig};
use posecast_core::motion::{load_scene, load_scene_file, save_scene};
use posecast_core::training::{evaluate_baseline, make_samples};

fn posecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posecast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = posecast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, persons: usize, scenes: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{persons}_{scenes}_{seed}"));
    ok(&[
        "gen",
        "--persons",
        &persons.to_string(),
        "--frames",
        "20",
        "--scenes",
        &scenes.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out
}

const TOY_CONFIG: &str = r#"{
  "model": {"d_model": 16, "d_head": 8, "heads": 2, "blocks": 1, "d_ff": 32,
            "kernel": 4, "horizon": 5, "k_out": 5},
  "train": {"epochs": 2, "batch_size": 2, "observed_frames": 11, "dropout": 0.0, "seed": 4}
}"#;

fn toy_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, TOY_CONFIG).unwrap();
    p
}

fn train_toy(dir: &Path, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let cfg = toy_config(dir);
    let out = dir.join(name);
    let mut args = vec!["train", "--data", s(data), "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "gen",
            "--persons",
            "3",
            "--frames",
            "76",
            "--scenes",
            "8",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
    }
    let fa = files(&a);
    assert_eq!(fa.len(), 9);
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    // Manifests embed their own paths; compare scene bytes and manifest hashes.
    let fb = files(&b);
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "manifest.json" {
            assert_eq!(ba, bb, "{na} differs");
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fa.iter().find(|f| f.0 == "manifest.json").unwrap().1).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["output_hashes"].as_object().unwrap().len(), 8);
}

#[test]
fn gen_ten_person_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 10, 1, 2);
    let scene = load_scene(data.join("scene_0000.json")).unwrap();
    assert_eq!(scene.num_persons(), 10);
    assert_eq!(scene.num_frames(), 20);
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 2, 3, 1);
    let a = train_toy(dir.path(), &data, "run_a", &[]);
    let b = train_toy(dir.path(), &data, "run_b", &[]);
    for name in ["checkpoint.json", "loss.csv", "manifest.json"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
    assert_eq!(
        std::fs::read(a.join("checkpoint.json")).unwrap(),
        std::fs::read(b.join("checkpoint.json")).unwrap()
    );
    let loss = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert!(loss.starts_with("epoch,loss\n"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["checkpoint_hash"].as_str().unwrap().starts_with("sha256:"));
    assert_eq!(manifest["config"]["train"]["seed"], 4);
}

#[test]
fn no_trpe_checkpoint_has_no_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 2, 2, 1);
    let run = train_toy(dir.path(), &data, "ablate", &["--ablation", "no_trpe"]);
    let ckpt = std::fs::read_to_string(run.join("checkpoint.json")).unwrap();
    assert!(!ckpt.contains("trpe.table"));
    let full = train_toy(dir.path(), &data, "full", &[]);
    assert!(std::fs::read_to_string(full.join("checkpoint.json"))
        .unwrap()
        .contains("trpe.table"));
}

#[test]
fn eval_reports_rows_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 2, 2, 3);
    let run = train_toy(dir.path(), &data, "run", &[]);
    let ckpt = run.join("checkpoint.json");
    // 25 fps, 5 predicted frames: horizons up to 0.2 s.
    let out = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--horizons",
        "0.04,0.12,0.2",
        "--baseline",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for metric in ["jpe", "ape"] {
        let n = rows.iter().filter(|r| r[0] == metric).count();
        assert_eq!(n, 4, "{metric}: three horizons plus overall");
    }
    assert!(rows.iter().any(|r| r[0] == "fde" && r[1] == "overall"));

    // Baseline rows equal a direct evaluation.
    let scenes: Vec<_> = posecast_cli::scene_paths(&data)
        .unwrap()
        .iter()
        .map(|p| load_scene(p).unwrap())
        .collect();
    let samples = make_samples(&scenes, 11, 5).unwrap();
    let direct = evaluate_baseline(&samples, &[0.04, 0.12, 0.2]).unwrap();
    for r in &direct.rows {
        let h = r.horizon_s.map_or("overall".to_string(), |h| format!("{h:?}"));
        let row = rows
            .iter()
            .find(|x| x[0] == format!("zero_velocity.{}", r.metric) && x[1] == h)
            .unwrap();
        assert_eq!(row[2].parse::<f64>().unwrap(), r.value_mm);
    }

    // CSV and JSON carry the same numbers.
    let out = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--horizons",
        "0.04,0.12,0.2",
        "--format",
        "json",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for jr in json["rows"].as_array().unwrap() {
        let h = jr["horizon_s"]
            .as_f64()
            .map_or("overall".to_string(), |h| format!("{h:?}"));
        let row = rows
            .iter()
            .find(|x| x[0] == jr["metric"].as_str().unwrap() && x[1] == h)
            .unwrap();
        assert_eq!(row[2].parse::<f64>().unwrap(), jr["value_mm"].as_f64().unwrap());
    }

    let bad = posecast(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--horizons", "0.6"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("horizons"));

    let report = dir.path().join("report.csv");
    ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--horizons",
        "0.2",
        "--out",
        s(&report),
    ]);
    assert!(dir.path().join("report.csv.manifest.json").exists());
}

fn untrained_checkpoint(dir: &Path, init_std: f64) -> PathBuf {
    let cfg = ModelConfig {
        kernel: 4,
        d_ff: 32,
        init_std,
        ..ModelConfig::toy(16, 2, 1, 5)
    };
    let path = dir.join(format!("untrained_{init_std}.json"));
    save_checkpoint(&path, &Checkpoint::new(Model::new(cfg, 1).unwrap(), Some(11))).unwrap();
    path
}

#[test]
fn predict_appends_frozen_frames() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 3, 1, 5);
    let scene = data.join("scene_0000.json");
    let ckpt = untrained_checkpoint(dir.path(), 0.02);
    let out = dir.path().join("pred.json");
    ok(&["predict", "--ckpt", s(&ckpt), "--scene", s(&scene), "--out", s(&out)]);
    let file = load_scene_file(&out).unwrap();
    assert_eq!(file.predicted_from_frame, Some(20));
    assert_eq!(file.scene.num_frames(), 25);
    for seq in &file.scene.persons {
        for f in 20..25 {
            assert_eq!(seq.frame(f), seq.frame(19));
        }
    }
    assert!(dir.path().join("pred.json.manifest.json").exists());
}

#[test]
fn dump_psi_and_attention() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 3, 1, 6);
    let scene_path = data.join("scene_0000.json");
    let ckpt = untrained_checkpoint(dir.path(), 0.3);

    // One person: every ψ entry is zero.
    let mut one = load_scene(&scene_path).unwrap();
    one.persons.truncate(1);
    let single = dir.path().join("single.json");
    save_scene(&single, &one).unwrap();
    let psi = dir.path().join("psi.csv");
    ok(&[
        "dump",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&single),
        "--what",
        "psi",
        "--out",
        s(&psi),
    ]);
    let text = std::fs::read_to_string(&psi).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 16 * 5);
    assert!(rows.iter().all(|r| r.split(',').skip(1).all(|v| v == "0")));

    let att = dir.path().join("att.csv");
    ok(&[
        "dump",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene_path),
        "--what",
        "attention",
        "--layer",
        "0",
        "--out",
        s(&att),
    ]);
    let text = std::fs::read_to_string(&att).unwrap();
    for line in text.lines().skip(1) {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    let idx = dir.path().join("idx.csv");
    ok(&[
        "dump",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene_path),
        "--what",
        "trpe-indices",
        "--out",
        s(&idx),
    ]);
    let text = std::fs::read_to_string(&idx).unwrap();
    assert!(text.starts_with("person_a,person_b,window,distance,index\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3 * 16);

    let bad_layer = posecast(&[
        "dump",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene_path),
        "--what",
        "attention",
        "--layer",
        "4",
        "--out",
        s(&att),
    ]);
    assert_eq!(bad_layer.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_layer.stderr).contains("layer"));
    let bad_what = posecast(&[
        "dump",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene_path),
        "--what",
        "heads",
        "--out",
        s(&att),
    ]);
    assert_eq!(bad_what.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = posecast(&[
        "predict",
        "--ckpt",
        "/nonexistent/ckpt.json",
        "--scene",
        "x.json",
        "--out",
        "y.json",
    ]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/ckpt.json"));

    let data = gen(dir.path(), 2, 1, 1);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"d_model": 16, "heads": 3}}"#).unwrap();
    let out = posecast(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_model"));

    std::fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = posecast(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let out = posecast(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("o")),
        "--ablation",
        "eupe,no_trpe",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = posecast(&["gen", "--persons", "0", "--out", s(&dir.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("persons"));
}

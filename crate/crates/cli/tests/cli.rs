use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dacad::data::{read_labeled_csv, LabeledDataset};
use dacad::{save_params, wasserstein_1d, Architecture, ModelParams, Normalization, Tensor};
use serde_json::{json, Value};

fn dacad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dacad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) {
    let mut text = format!("{header}\n");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn small_config(out: &Path, lambda: f64) -> Value {
    json!({
        "task": {
            "kind": "synthetic",
            "params": {
                "generator": "gaussian-shift",
                "n_per_class": 40,
                "num_classes": 3,
                "dim": 2,
                "angle_deg": 25.0,
                "radius": 3.0,
                "noise": 0.5
            }
        },
        "model": { "encoder_widths": [16, 4], "classifier_hidden": [], "num_classes": 3 },
        "train": {
            "lambda": lambda,
            "tau": 0.9,
            "iterations": 3,
            "alternations": 2,
            "align_batch_per_class": 16,
            "classifier_batch_size": 32,
            "pretrain_steps": 60,
            "adam": { "learning_rate": 0.01, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8 },
            "co_train_encoder": true
        },
        "swd": { "num_projections": 16, "p": 2.0, "normalization": "mean", "seed": 7 },
        "augment": null,
        "output_dir": p(out),
        "seeds": [0, 1],
        "dump_every": 2
    })
}

fn save_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

#[test]
fn swd_of_identical_files_is_zero_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    write_csv(&a, "x0,x1", &[vec![0.5, 1.0], vec![-2.0, 3.0], vec![4.0, 0.25]]);
    let out = dacad(&["swd", p(&a), p(&a)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim().parse::<f64>().unwrap(), 0.0);

    let b = dir.path().join("b.csv");
    write_csv(&b, "x0,x1", &[vec![1.5, 0.0], vec![-1.0, 2.0], vec![3.0, 1.25]]);
    let first = dacad(&["swd", p(&a), p(&b), "--seed", "4"]);
    let second = dacad(&["swd", p(&a), p(&b), "--seed", "4"]);
    assert_eq!(stdout(&first), stdout(&second));
    // Twelve significant digits in scientific notation.
    let text = stdout(&first);
    let mantissa = text.trim().split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 12, "{text}");
}

#[test]
fn swd_of_one_dimensional_files_matches_the_exact_distance() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let xa = [0.3, -1.2, 2.5, 0.0, 4.1];
    let xb = [1.0, 1.1, -0.4, 3.3, 2.2];
    write_csv(&a, "x0", &xa.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    write_csv(&b, "label,x0", &xb.iter().map(|&v| vec![0.0, v]).collect::<Vec<_>>());
    let out = dacad(&["swd", p(&a), p(&b), "-L", "10", "--json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let exact = wasserstein_1d(&xa, &xb, 2.0, Normalization::Mean).unwrap();
    assert!((v["swd"].as_f64().unwrap() - exact).abs() < 1e-12);
}

#[test]
fn swd_input_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    write_csv(&a, "x0,x1", &[vec![0.0, 1.0], vec![1.0, 2.0], vec![2.0, 0.0]]);
    write_csv(&b, "x0,x1", &[vec![0.0, 1.0], vec![5.0, 2.0]]);
    write_csv(&c, "x0", &[vec![0.0], vec![1.0], vec![2.0]]);

    let out = dacad(&["swd", p(&a), p(&c)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dimension"), "{}", stderr(&out));

    let out = dacad(&["swd", p(&a), p(&b), "--json"]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("warning"));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["subsampled"], json!(true));
    assert_eq!(v["rows"], json!(2));

    let out = dacad(&["swd", p(&a), p(&b), "--strict"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_data_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    let three = dir.path().join("three");
    let args = [
        "gen-data",
        "--generator",
        "gaussian-shift",
        "--set",
        "n_per_class=30",
        "--seed",
        "9",
    ];
    assert_eq!(code(&dacad(&[&args[..], &["--out", p(&one)]].concat())), 0);
    assert_eq!(code(&dacad(&[&args[..], &["--out", p(&two)]].concat())), 0);
    let manifest = one.join("manifest.json");
    assert_eq!(
        code(&dacad(&[
            "gen-data",
            "--from-manifest",
            p(&manifest),
            "--out",
            p(&three)
        ])),
        0
    );
    for file in ["source.csv", "target.csv", "manifest.json"] {
        let reference = std::fs::read(one.join(file)).unwrap();
        assert_eq!(reference, std::fs::read(two.join(file)).unwrap(), "{file}");
        assert_eq!(reference, std::fs::read(three.join(file)).unwrap(), "{file}");
    }
    let source = read_labeled_csv(one.join("source.csv"), None).unwrap();
    let target = read_labeled_csv(one.join("target.csv"), None).unwrap();
    assert_eq!((source.len(), target.len()), (120, 120));
}

#[test]
fn gen_data_rejects_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dacad(&["gen-data", "--generator", "spirals", "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("spirals"));
    let out = dacad(&[
        "gen-data",
        "--generator",
        "two-moons",
        "--set",
        "radius=2",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("radius"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("run"), 1.0);
    cfg["task"] = json!({ "kind": "csv", "source": "/no/such/source.csv", "target": "/no/such/target.csv" });
    let path = save_config(dir.path(), "missing.json", &cfg);
    let out = dacad(&["pretrain", "--config", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("task.source"), "{}", stderr(&out));

    let mut cfg = small_config(&dir.path().join("run"), 1.0);
    cfg["swd"].as_object_mut().unwrap().remove("num_projections");
    let path = save_config(dir.path(), "implicit.json", &cfg);
    let out = dacad(&["pretrain", "--config", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("swd.num_projections"), "{}", stderr(&out));

    let mut cfg = small_config(&dir.path().join("run"), 1.0);
    cfg["train"]["tau"] = json!(1.5);
    let path = save_config(dir.path(), "tau.json", &cfg);
    let out = dacad(&["pretrain", "--config", p(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("tau"), "{}", stderr(&out));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn pretrain_then_train_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = save_config(dir.path(), "cfg.json", &small_config(&run, 1.0));
    let out = dacad(&["pretrain", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = std::fs::read(run.join("seed-0/pretrained.params")).unwrap();
    let out = dacad(&["pretrain", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0);
    assert_eq!(first, std::fs::read(run.join("seed-0/pretrained.params")).unwrap());

    let out = dacad(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&run.join("dacad/metrics.csv"));
    assert_eq!(
        header,
        [
            "run_id",
            "seed",
            "iteration",
            "ce_loss",
            "swd_loss",
            "source_acc",
            "target_acc",
            "pl_c0",
            "pl_c1",
            "pl_c2",
            "pl_total"
        ]
    );
    assert_eq!(rows.len(), 2 * 3);

    // The summary agrees with the last metrics row of each seed.
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("dacad/summary.json")).unwrap()).unwrap();
    let finals: Vec<f64> = rows
        .iter()
        .filter(|r| r[2] == "3")
        .map(|r| r[6].parse().unwrap())
        .collect();
    let mean = finals.iter().sum::<f64>() / 2.0;
    let std = ((finals[0] - mean).powi(2) + (finals[1] - mean).powi(2)).sqrt();
    assert!((summary["target_accuracy"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((summary["target_accuracy"]["std"].as_f64().unwrap() - std).abs() < 1e-12);

    let dump = run.join("dacad/seed-1/embeddings-iter0002.csv");
    let (header, rows) = read_csv(&dump);
    assert_eq!(&header[..4], ["domain", "true_label", "pseudo_label", "confidence"]);
    assert_eq!(header.len(), 4 + 4);
    assert_eq!(rows.len(), 240);
    assert!(rows.iter().filter(|r| r[0] == "source").all(|r| r[2] == "-1"));
    assert!(!run.join("dacad/seed-1/embeddings-iter0003.csv").exists());
    assert!(run.join("dacad/seed-1/final.params").is_file());
}

#[test]
fn zero_lambda_equals_source_only() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = save_config(dir.path(), "cfg.json", &small_config(&run, 0.0));
    assert_eq!(code(&dacad(&["pretrain", "--config", p(&cfg)])), 0);
    assert_eq!(code(&dacad(&["train", "--config", p(&cfg)])), 0);
    assert_eq!(code(&dacad(&["train", "--config", p(&cfg), "--source-only"])), 0);
    for seed in [0, 1] {
        let a = std::fs::read(run.join(format!("dacad/seed-{seed}/final.params"))).unwrap();
        let b = std::fs::read(run.join(format!("source-only/seed-{seed}/final.params"))).unwrap();
        assert_eq!(a, b);
    }
    let read = |name: &str| -> Value {
        serde_json::from_str(&std::fs::read_to_string(run.join(name).join("summary.json")).unwrap()).unwrap()
    };
    let (a, b) = (read("dacad"), read("source-only"));
    let (ma, mb) = (
        a["target_accuracy"]["mean"].as_f64().unwrap(),
        b["target_accuracy"]["mean"].as_f64().unwrap(),
    );
    assert!((ma - mb).abs() < 1e-12);
}

#[test]
fn divergence_exits_with_runtime_status() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut cfg = small_config(&run, 1.0);
    let path = save_config(dir.path(), "ok.json", &cfg);
    assert_eq!(code(&dacad(&["pretrain", "--config", p(&path)])), 0);
    cfg["train"]["adam"]["learning_rate"] = json!(1e300);
    let path = save_config(dir.path(), "bad.json", &cfg);
    let out = dacad(&["train", "--config", p(&path)]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}

#[test]
fn checkpoint_architecture_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = small_config(&run, 1.0);
    let path = save_config(dir.path(), "cfg.json", &cfg);
    let other = ModelParams::init(
        &Architecture {
            input_dim: 2,
            encoder_widths: vec![8],
            classifier_hidden: vec![],
            num_classes: 3,
        },
        0,
    )
    .unwrap();
    let ckpt = dir.path().join("other.params");
    save_params(&other, &ckpt).unwrap();
    let out = dacad(&["train", "--config", p(&path), "--checkpoint", p(&ckpt)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

/// A model whose logits equal its two input features.
fn passthrough_model(dir: &Path) -> PathBuf {
    let arch = Architecture {
        input_dim: 2,
        encoder_widths: vec![2],
        classifier_hidden: vec![],
        num_classes: 2,
    };
    let mut m = ModelParams::init(&arch, 0).unwrap();
    m.encoder.layers[0].weight = Tensor::identity(2);
    m.encoder.layers[0].bias = Tensor::zeros(&[2]);
    m.classifier.layers[0].weight = Tensor::identity(2);
    m.classifier.layers[0].bias = Tensor::zeros(&[2]);
    let path = dir.join("model.params");
    save_params(&m, &path).unwrap();
    path
}

#[test]
fn eval_reports_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = passthrough_model(dir.path());
    let data = dir.path().join("data.csv");
    let ds = LabeledDataset::new(
        Tensor::from_rows(&[vec![1e6, 0.0], vec![0.0, 1e6], vec![3.0, 0.0], vec![0.0, 2.0]]).unwrap(),
        vec![0, 1, 0, 1],
        2,
    )
    .unwrap();
    dacad::data::write_labeled_csv(&ds, &data).unwrap();

    let out = dacad(&["eval", "--checkpoint", p(&ckpt), p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    let overall = table.lines().find(|l| l.starts_with("overall")).unwrap();
    assert!(overall.ends_with("1.0000"), "{table}");

    let out = dacad(&["eval", "--checkpoint", p(&ckpt), p(&data), "--json"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["accuracy"], json!(1.0));
    assert_eq!(v["per_class"][1]["total"], json!(2));
    let row1 = table.lines().find(|l| l.starts_with('1')).unwrap();
    let cells: Vec<&str> = row1.split_whitespace().collect();
    assert_eq!(cells[1], v["per_class"][1]["correct"].to_string());
}

#[test]
fn eval_rejects_unlabeled_input() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = passthrough_model(dir.path());
    let data = dir.path().join("features.csv");
    write_csv(&data, "x0,x1", &[vec![1.0, 0.0]]);
    let out = dacad(&["eval", "--checkpoint", p(&ckpt), p(&data)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("label"));
}

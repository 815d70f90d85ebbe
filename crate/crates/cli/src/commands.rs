use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use dacad::adapt::{evaluate, pretrain as fit_source, train as adapt, Mode};
use dacad::data::{read_feature_csv, read_labeled_csv, write_labeled_csv, GeneratorSpec};
use dacad::model::load_params_for;
use dacad::rng::{stream_rng, Stream};
use dacad::{load_params, save_params, swd_estimate, ModelParams, SwdConfig, Tensor};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{has_label_column, ExperimentConfig, TaskConfig};
use crate::output::{write_embeddings, write_json, MetricsWriter, SeedStats};
use crate::{EvalArgs, GenDataArgs, RunArgs, SwdArgs, TrainArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn swd(args: &SwdArgs) -> Result<()> {
    let cfg = SwdConfig {
        num_projections: args.projections,
        p: args.p,
        normalization: args.normalization.into(),
        seed: args.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut a = read_feature_csv(&args.file_a)?;
    let mut b = read_feature_csv(&args.file_b)?;
    if a.cols() != b.cols() {
        return Err(usage(format!(
            "dimension mismatch: {} has {} columns, {} has {}",
            args.file_a.display(),
            a.cols(),
            args.file_b.display(),
            b.cols()
        )));
    }
    let subsampled = a.rows() != b.rows();
    if subsampled {
        let msg = format!("row counts differ ({} vs {})", a.rows(), b.rows());
        if args.strict {
            return Err(usage(format!("{msg}; refusing to subsample under --strict")));
        }
        let n = a.rows().min(b.rows());
        eprintln!("warning: {msg}; subsampling both to {n} rows");
        let shrink = |x: &Tensor, side: u64| -> Result<Tensor> {
            if x.rows() == n {
                return Ok(x.clone());
            }
            let mut rng = stream_rng(args.seed, Stream::Subsample, side, 0);
            let mut idx = sample_indices(&mut rng, x.rows(), n).into_vec();
            idx.sort_unstable();
            Ok(x.select_rows(&idx)?)
        };
        a = shrink(&a, 0)?;
        b = shrink(&b, 1)?;
    }
    let value = swd_estimate(&a, &b, &cfg)?.value;
    if args.json {
        let out = json!({
            "swd": value,
            "rows": a.rows(),
            "dim": a.cols(),
            "projections": cfg.num_projections,
            "p": cfg.p,
            "subsampled": subsampled,
        });
        println!("{out}");
    } else {
        println!("{value:.11e}");
    }
    Ok(())
}

/// What `gen-data` records next to the files it writes; enough to
/// regenerate them exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct DataManifest {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub source_file: String,
    pub target_file: String,
    pub source_rows: usize,
    pub target_rows: usize,
}

pub fn default_generator(name: &str) -> Option<GeneratorSpec> {
    match name {
        "gaussian-shift" => Some(GeneratorSpec::GaussianShift {
            n_per_class: 500,
            num_classes: 4,
            dim: 2,
            angle_deg: 30.0,
            radius: 3.0,
            noise: 0.6,
        }),
        "two-moons" => Some(GeneratorSpec::TwoMoons {
            n: 1000,
            rotation_deg: 20.0,
            translation: [0.0, 0.0],
            noise: 0.1,
        }),
        _ => None,
    }
}

fn apply_overrides(spec: GeneratorSpec, overrides: &[String]) -> Result<GeneratorSpec> {
    let mut value = serde_json::to_value(&spec)?;
    let fields = value.as_object_mut().expect("generator specs serialize as objects");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        if key == "generator" || !fields.contains_key(key) {
            let known: Vec<&str> = fields
                .keys()
                .map(String::as_str)
                .filter(|k| *k != "generator")
                .collect();
            return Err(usage(format!(
                "unknown parameter `{key}` for {}; known: {}",
                spec.name(),
                known.join(", ")
            )));
        }
        let parsed: Value = serde_json::from_str(raw).map_err(|e| usage(format!("--set {key}: {e}")))?;
        fields.insert(key.to_string(), parsed);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("generator parameters: {e}")))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let (spec, seed) = if let Some(path) = &args.from_manifest {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: DataManifest = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        (m.spec, args.seed.unwrap_or(m.seed))
    } else if let Some(path) = &args.config {
        let cfg = ExperimentConfig::load(path)?;
        let TaskConfig::Synthetic { params } = cfg.task else {
            return Err(usage("task: gen-data needs a synthetic task"));
        };
        (params, args.seed.unwrap_or(cfg.seeds.first().copied().unwrap_or(0)))
    } else {
        let name = args
            .generator
            .as_deref()
            .ok_or_else(|| usage("one of --generator, --config or --from-manifest is required"))?;
        let spec = default_generator(name)
            .ok_or_else(|| usage(format!("unknown generator `{name}`; known: gaussian-shift, two-moons")))?;
        (apply_overrides(spec, &args.overrides)?, args.seed.unwrap_or(0))
    };
    let pair = spec.generate(seed).map_err(|e| usage(e.to_string()))?;
    create_dir(&args.out)?;
    write_labeled_csv(&pair.source, args.out.join("source.csv"))?;
    write_labeled_csv(&pair.target, args.out.join("target.csv"))?;
    let manifest = DataManifest {
        spec,
        seed,
        source_file: "source.csv".into(),
        target_file: "target.csv".into(),
        source_rows: pair.source.len(),
        target_rows: pair.target.len(),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} source and {} target rows to {}",
        manifest.source_rows,
        manifest.target_rows,
        args.out.display()
    );
    Ok(())
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub fn pretrained_path(out: &Path, seed: u64) -> PathBuf {
    seed_dir(out, seed).join("pretrained.params")
}

pub fn pretrain(args: &RunArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    write_json(
        &out.join("pretrain-manifest.json"),
        &json!({ "command": "pretrain", "config": &cfg }),
    )?;
    let metrics_path = out.join("pretrain_metrics.csv");
    let mut metrics =
        csv::Writer::from_path(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    metrics.write_record(["seed", "epoch", "steps", "ce_loss", "source_acc"])?;
    metrics.flush()?;

    let mut source_acc = Vec::new();
    let mut target_acc = Vec::new();
    for &seed in &cfg.seeds {
        let data = cfg.load_task(seed)?;
        let arch = cfg.architecture(data.source.dim());
        let init = ModelParams::init(&arch, seed).map_err(|e| usage(format!("model: {e}")))?;
        let (model, records) = fit_source(&data.source, &init, &cfg.train_config(seed))
            .with_context(|| format!("seed {seed}: pre-training failed"))?;
        for r in &records {
            metrics.write_record([
                seed.to_string(),
                r.epoch.to_string(),
                r.steps.to_string(),
                r.ce_loss.to_string(),
                r.source_accuracy.to_string(),
            ])?;
            metrics.flush()?;
        }
        create_dir(&seed_dir(out, seed))?;
        save_params(&model, pretrained_path(out, seed))?;
        let s = evaluate(&model, &data.source)?.accuracy;
        source_acc.push(s);
        let t = data.target_eval.as_ref().map(|t| evaluate(&model, t)).transpose()?;
        if let Some(t) = &t {
            target_acc.push(t.accuracy);
        }
        if !args.json {
            match t {
                Some(t) => println!("seed {seed}: source acc {s:.4}, target acc {:.4}", t.accuracy),
                None => println!("seed {seed}: source acc {s:.4}"),
            }
        }
    }
    let summary = json!({
        "seeds": &cfg.seeds,
        "source_accuracy": SeedStats::new(source_acc),
        "target_accuracy": (!target_acc.is_empty()).then(|| SeedStats::new(target_acc)),
    });
    write_json(&out.join("pretrain_summary.json"), &summary)?;
    if args.json {
        println!("{summary}");
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.run)?;
    let (mode, run_id) = if args.source_only {
        (Mode::SourceOnly, "source-only")
    } else {
        (Mode::Dacad, "dacad")
    };
    let run_dir = cfg.output_dir.join(run_id);
    create_dir(&run_dir)?;
    write_json(
        &run_dir.join("manifest.json"),
        &json!({ "command": "train", "mode": run_id, "checkpoint": &args.checkpoint, "config": &cfg }),
    )?;
    let metrics_path = run_dir.join("metrics.csv");
    let mut metrics = MetricsWriter::create(&metrics_path, cfg.model.num_classes)?;

    let mut source_acc = Vec::new();
    let mut target_acc = Vec::new();
    let mut pseudo_totals = Vec::new();
    for &seed in &cfg.seeds {
        let data = cfg.load_task(seed)?;
        let arch = cfg.architecture(data.source.dim());
        let checkpoint = args
            .checkpoint
            .clone()
            .unwrap_or_else(|| pretrained_path(&cfg.output_dir, seed));
        if !checkpoint.is_file() {
            return Err(usage(format!(
                "no checkpoint at {}; run `dacad pretrain` first or pass --checkpoint",
                checkpoint.display()
            )));
        }
        let init = load_params_for(&checkpoint, &arch)?;
        let dir = seed_dir(&run_dir, seed);
        create_dir(&dir)?;

        let mut last_good = 0;
        let mut observer = |r: &dacad::adapt::IterationRecord, model: &ModelParams, pseudo: &dacad::PseudoLabelSet| {
            let to_io = |e: anyhow::Error| std::io::Error::other(format!("{e:#}"));
            metrics.append(run_id, seed, r).map_err(to_io)?;
            if cfg.dump_every.is_some_and(|e| r.iteration.is_multiple_of(e)) {
                let path = dir.join(format!("embeddings-iter{:04}.csv", r.iteration));
                let labels = data.target_eval.as_ref().map(|t| t.labels.as_slice());
                write_embeddings(&path, model, &data.source, &data.target, labels, pseudo).map_err(to_io)?;
            }
            last_good = r.iteration;
            Ok(())
        };
        let result = adapt(
            &data.source,
            &data.target,
            &init,
            &cfg.train_config(seed),
            mode,
            data.target_eval.as_ref(),
            &mut observer,
        );
        let (model, log) = match result {
            Ok(v) => v,
            Err(e @ dacad::Error::Divergence { .. }) => {
                let note = if last_good == 0 {
                    "no iteration completed".to_string()
                } else {
                    format!(
                        "last good iteration {last_good}, recorded in {}",
                        metrics_path.display()
                    )
                };
                return Err(anyhow!(e).context(format!("seed {seed}: training diverged; {note}")));
            }
            Err(e) => return Err(anyhow!(e).context(format!("seed {seed}: training failed"))),
        };
        save_params(&model, dir.join("final.params"))?;
        let last = log.records.last().expect("at least one iteration");
        source_acc.push(last.source_accuracy);
        if let Some(t) = last.target_accuracy {
            target_acc.push(t);
        }
        pseudo_totals.push(last.pseudo_label_total());
        if !args.run.json {
            match last.target_accuracy {
                Some(t) => println!(
                    "seed {seed}: source acc {:.4}, target acc {t:.4}, pseudo-labels {}",
                    last.source_accuracy,
                    last.pseudo_label_total()
                ),
                None => println!("seed {seed}: source acc {:.4}", last.source_accuracy),
            }
        }
    }
    let summary = json!({
        "run": run_id,
        "seeds": &cfg.seeds,
        "iterations": cfg.train.iterations,
        "source_accuracy": SeedStats::new(source_acc),
        "target_accuracy": (!target_acc.is_empty()).then(|| SeedStats::new(target_acc)),
        "final_pseudo_labels": pseudo_totals,
    });
    write_json(&run_dir.join("summary.json"), &summary)?;
    if args.run.json {
        println!("{summary}");
    } else if let Some(t) = summary["target_accuracy"].as_object() {
        println!(
            "target accuracy over {} seed(s): {:.4} ± {:.4}",
            cfg.seeds.len(),
            t["mean"].as_f64().unwrap_or(f64::NAN),
            t["std"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if !args.data.is_file() {
        return Err(usage(format!("file not found: {}", args.data.display())));
    }
    if !has_label_column(&args.data)? {
        return Err(usage(format!(
            "{} has no `label` column; eval needs labeled data",
            args.data.display()
        )));
    }
    let model = load_params(&args.checkpoint)?;
    let data = read_labeled_csv(&args.data, Some(model.num_classes()))?;
    let acc = evaluate(&model, &data)?;
    let per_class: Vec<Value> = acc
        .per_class()
        .iter()
        .enumerate()
        .map(|(c, a)| {
            json!({
                "class": c,
                "correct": acc.per_class_correct[c],
                "total": acc.per_class_total[c],
                "accuracy": a,
            })
        })
        .collect();
    if args.json {
        let out = json!({
            "accuracy": acc.accuracy,
            "correct": acc.correct,
            "total": acc.total,
            "per_class": per_class,
        });
        println!("{out}");
        return Ok(());
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "{:<8} {:>8} {:>8} {:>9}",
        "class", "correct", "total", "accuracy"
    )?;
    for (c, a) in acc.per_class().iter().enumerate() {
        let shown = a.map_or("-".to_string(), |a| format!("{a:.4}"));
        writeln!(
            stdout,
            "{c:<8} {:>8} {:>8} {shown:>9}",
            acc.per_class_correct[c], acc.per_class_total[c]
        )?;
    }
    writeln!(
        stdout,
        "{:<8} {:>8} {:>8} {:>9.4}",
        "overall", acc.correct, acc.total, acc.accuracy
    )?;
    Ok(())
}

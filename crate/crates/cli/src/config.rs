//! Experiment configuration: one JSON document that names the task, the
//! architecture and every training hyper-parameter.
//!
//! Files are strict. Unknown keys are rejected, and so are omitted keys,
//! including optional ones, which must be written out as `null`. Built-in
//! defaults are used only when no file is given, and the resolved
//! configuration is always written next to the run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dacad::adapt::TrainConfig;
use dacad::data::{
    load_idx, preprocess, read_feature_csv, read_labeled_csv, AugmentConfig, GeneratorSpec, LabeledDataset,
    UnlabeledDataset,
};
use dacad::numerics::AdamConfig;
use dacad::{Architecture, SwdConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub swd: SwdConfig,
    pub augment: Option<AugmentConfig>,
    pub output_dir: PathBuf,
    /// One run per seed. For synthetic tasks the seed also draws the data.
    pub seeds: Vec<u64>,
    /// Write an embedding dump every this many outer iterations.
    pub dump_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Synthetic {
        params: GeneratorSpec,
    },
    /// CSV files with a leading `label` column. Target labels, when
    /// present, are used for evaluation only.
    Csv {
        source: PathBuf,
        target: PathBuf,
    },
    /// MNIST-style IDX image/label files, resized to `image_size` squared.
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
        image_size: usize,
        source_subset: Option<usize>,
        target_subset: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder layer widths; the last one is the embedding size.
    pub encoder_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
}

/// The adaptation hyper-parameters other than the SWD and augmentation
/// settings, which live at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lambda: f64,
    pub tau: f64,
    pub iterations: usize,
    pub alternations: usize,
    pub align_batch_per_class: Option<usize>,
    pub classifier_batch_size: Option<usize>,
    pub pretrain_steps: usize,
    pub adam: AdamConfig,
    pub co_train_encoder: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            task: TaskConfig::Synthetic {
                params: GeneratorSpec::GaussianShift {
                    n_per_class: 500,
                    num_classes: 4,
                    dim: 2,
                    angle_deg: 30.0,
                    radius: 3.0,
                    noise: 0.6,
                },
            },
            model: ModelConfig {
                encoder_widths: vec![64, 16],
                classifier_hidden: vec![],
                num_classes: 4,
            },
            train: TrainSection {
                lambda: t.lambda,
                tau: t.tau,
                iterations: t.iterations,
                alternations: t.alternations,
                align_batch_per_class: t.align_batch_per_class,
                classifier_batch_size: t.classifier_batch_size,
                pretrain_steps: t.pretrain_steps,
                adam: t.adam,
                co_train_encoder: t.co_train_encoder,
            },
            swd: t.swd,
            augment: None,
            output_dir: PathBuf::from("runs/default"),
            seeds: vec![0],
            dump_every: Some(10),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| UsageError(format!("malformed JSON: {e}")))?;
        let cfg: Self = serde_path_to_error::deserialize(raw.clone()).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let missing = inner
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next());
            UsageError(match (path.as_str(), missing) {
                (".", Some(field)) => format!("{field}: missing"),
                (_, Some(field)) => format!("{path}.{field}: missing"),
                (".", None) => inner,
                _ => format!("{path}: {inner}"),
            })
        })?;
        let canonical = serde_json::to_value(&cfg)?;
        let mut missing = Vec::new();
        missing_keys(&canonical, &raw, "", &mut missing);
        if !missing.is_empty() {
            return Err(UsageError(format!(
                "every setting must be given explicitly; missing: {}",
                missing.join(", ")
            ))
            .into());
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| UsageError(format!("{name}: {msg}"));
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required".into()).into());
        }
        if self.dump_every == Some(0) {
            return Err(field("dump_every", "must be positive or null".into()).into());
        }
        let paths: Vec<(&str, &PathBuf)> = match &self.task {
            TaskConfig::Synthetic { .. } => vec![],
            TaskConfig::Csv { source, target } => vec![("task.source", source), ("task.target", target)],
            TaskConfig::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                ..
            } => vec![
                ("task.source_images", source_images),
                ("task.source_labels", source_labels),
                ("task.target_images", target_images),
                ("task.target_labels", target_labels),
            ],
        };
        for (name, p) in paths {
            if !p.is_file() {
                return Err(field(name, format!("file not found: {}", p.display())).into());
            }
        }
        if let TaskConfig::Synthetic { params } = &self.task {
            let k = match params {
                GeneratorSpec::GaussianShift { num_classes, .. } => *num_classes,
                GeneratorSpec::TwoMoons { .. } => 2,
            };
            if k > self.model.num_classes {
                return Err(field(
                    "model.num_classes",
                    format!("{} is fewer than the task's {k} classes", self.model.num_classes),
                )
                .into());
            }
        }
        if self.model.encoder_widths.is_empty() {
            return Err(field("model.encoder_widths", "at least one layer is required".into()).into());
        }
        self.train_config(self.seeds[0])
            .validate()
            .map_err(|e| UsageError(format!("train: {e}")))?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda: t.lambda,
            tau: t.tau,
            iterations: t.iterations,
            alternations: t.alternations,
            align_batch_per_class: t.align_batch_per_class,
            classifier_batch_size: t.classifier_batch_size,
            pretrain_steps: t.pretrain_steps,
            adam: t.adam,
            swd: self.swd,
            co_train_encoder: t.co_train_encoder,
            augment: self.augment,
            seed,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            encoder_widths: self.model.encoder_widths.clone(),
            classifier_hidden: self.model.classifier_hidden.clone(),
            num_classes: self.model.num_classes,
        }
    }

    pub fn load_task(&self, seed: u64) -> Result<TaskData> {
        let data = match &self.task {
            TaskConfig::Synthetic { params } => {
                let pair = params.generate(seed)?;
                TaskData {
                    target: pair.target.unlabeled(),
                    target_eval: Some(pair.target),
                    source: pair.source,
                }
            }
            TaskConfig::Csv { source, target } => {
                let source = read_labeled_csv(source, Some(self.model.num_classes))?;
                if has_label_column(target)? {
                    let t = read_labeled_csv(target, Some(self.model.num_classes))?;
                    TaskData {
                        source,
                        target: t.unlabeled(),
                        target_eval: Some(t),
                    }
                } else {
                    TaskData {
                        source,
                        target: UnlabeledDataset {
                            features: read_feature_csv(target)?,
                            image_shape: None,
                        },
                        target_eval: None,
                    }
                }
            }
            TaskConfig::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                image_size,
                source_subset,
                target_subset,
            } => {
                let s = load_idx(source_images, source_labels)?;
                let t = load_idx(target_images, target_labels)?;
                let s = preprocess(&s, *image_size, *source_subset, seed)?;
                let t = preprocess(&t, *image_size, *target_subset, seed)?;
                TaskData {
                    source: s,
                    target: t.unlabeled(),
                    target_eval: Some(t),
                }
            }
        };
        if data.source.num_classes > self.model.num_classes {
            return Err(UsageError(format!(
                "model.num_classes: {} is fewer than the {} classes in the source data",
                self.model.num_classes, data.source.num_classes
            ))
            .into());
        }
        if data.source.dim() != data.target.dim() {
            return Err(UsageError(format!(
                "task: source has {} features but target has {}",
                data.source.dim(),
                data.target.dim()
            ))
            .into());
        }
        Ok(data)
    }
}

pub struct TaskData {
    pub source: LabeledDataset,
    pub target: UnlabeledDataset,
    pub target_eval: Option<LabeledDataset>,
}

pub fn has_label_column(path: &Path) -> Result<bool> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(headers.get(0) == Some("label"))
}

/// Appends to `out` the dotted path of every object key in `canonical` that
/// does not appear in `raw`.
fn missing_keys(canonical: &Value, raw: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(c) = canonical else { return };
    let r = raw.as_object();
    for (key, value) in c {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match r.and_then(|r| r.get(key)) {
            Some(sub) => missing_keys(value, sub, &path, out),
            None => out.push(path),
        }
    }
}

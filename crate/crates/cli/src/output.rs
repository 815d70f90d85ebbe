use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use dacad::adapt::{IterationRecord, PseudoLabelSet};
use dacad::data::{LabeledDataset, UnlabeledDataset};
use dacad::model::predict_labels;
use dacad::ModelParams;
use serde::Serialize;

/// Per-iteration metrics, one CSV row per (seed, iteration). Each row is
/// flushed as soon as it is written so the file stays parseable if the run
/// is interrupted.
pub struct MetricsWriter {
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, num_classes: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        let mut header: Vec<String> = [
            "run_id",
            "seed",
            "iteration",
            "ce_loss",
            "swd_loss",
            "source_acc",
            "target_acc",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..num_classes).map(|c| format!("pl_c{c}")));
        header.push("pl_total".into());
        writer.write_record(&header)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, run_id: &str, seed: u64, r: &IterationRecord) -> Result<()> {
        let mut row = vec![
            run_id.to_string(),
            seed.to_string(),
            r.iteration.to_string(),
            r.ce_loss.to_string(),
            r.swd_loss.to_string(),
            r.source_accuracy.to_string(),
            r.target_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ];
        row.extend(r.pseudo_label_counts.iter().map(|c| c.to_string()));
        row.push(r.pseudo_label_total().to_string());
        self.writer.write_record(&row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Writes the embeddings of every source and target point with columns
/// `domain,true_label,pseudo_label,confidence,z0..`. Source rows and target
/// rows outside the pseudo-label set have `pseudo_label = -1`; `confidence`
/// is the model's top softmax probability. Unknown target labels are `-1`.
pub fn write_embeddings(
    path: &Path,
    model: &ModelParams,
    source: &LabeledDataset,
    target: &UnlabeledDataset,
    target_labels: Option<&[usize]>,
    pseudo: &PseudoLabelSet,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let f = model.architecture().embedding_dim();
    let mut header = String::from("domain,true_label,pseudo_label,confidence");
    for j in 0..f {
        header.push_str(&format!(",z{j}"));
    }
    writeln!(w, "{header}")?;

    let mut pseudo_of = vec![-1i64; target.len()];
    for (&i, &c) in pseudo.indices.iter().zip(&pseudo.classes) {
        pseudo_of[i] = c as i64;
    }
    let domains: [(&str, &dacad::Tensor); 2] = [("source", &source.features), ("target", &target.features)];
    for (domain, x) in domains {
        if x.rows() == 0 {
            continue;
        }
        let (z, _, probs) = model.forward(x)?;
        let (_, conf) = predict_labels(&probs);
        for i in 0..x.rows() {
            let (label, pl) = if domain == "source" {
                (source.labels[i] as i64, -1)
            } else {
                (target_labels.map_or(-1, |l| l[i] as i64), pseudo_of[i])
            };
            write!(w, "{domain},{label},{pl},{:?}", conf[i])?;
            for v in z.row(i) {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Values across seeds with their mean and sample standard deviation
/// (zero for a single seed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedStats {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SeedStats {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            per_seed: values,
            mean,
            std,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

//! CSV sample files. Labeled files have the header `label,x0,...,x{d-1}`;
//! plain sample files carry only feature columns.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_labeled_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.dim()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, label) in dataset.labels.iter().enumerate() {
        let mut record = vec![label.to_string()];
        // `{:?}` prints the shortest string that parses back to the same f64.
        record.extend(dataset.features.row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct RawCsv {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_raw(path: &Path) -> Result<RawCsv> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {}: cannot parse {field:?} as a number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("row {}: non-finite value", line + 1)));
        }
        rows.push(row);
    }
    Ok(RawCsv { header, rows })
}

/// Reads a labeled CSV. The class count is `num_classes` when given, else one
/// more than the largest label.
pub fn read_labeled_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    if raw.header.first().map(String::as_str) != Some("label") {
        return Err(Error::format(path, "no `label` column; labeled data expected"));
    }
    let d = raw.header.len() - 1;
    let mut labels = Vec::with_capacity(raw.rows.len());
    let mut data = Vec::with_capacity(raw.rows.len() * d);
    for (i, row) in raw.rows.iter().enumerate() {
        let label = row[0];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::format(
                path,
                format!("row {}: label {label} is not a class index", i + 1),
            ));
        }
        labels.push(label as usize);
        data.extend_from_slice(&row[1..]);
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(Tensor::from_vec(&[labels.len(), d], data)?, labels, k)
}

/// Reads the feature columns of a CSV as an `n×d` matrix; a leading `label`
/// column is ignored.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let skip = usize::from(raw.header.first().map(String::as_str) == Some("label"));
    let d = raw.header.len() - skip;
    let data = raw.rows.iter().flat_map(|r| r[skip..].iter().copied()).collect();
    Tensor::from_vec(&[raw.rows.len(), d], data)
}

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Mean softmax cross-entropy over the batch and its gradient wrt the logits,
/// `(softmax − onehot) / n`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = (logits.rows(), logits.cols());
    if n == 0 {
        return Err(Error::EmptyInput("softmax_cross_entropy"));
    }
    if labels.len() != n {
        return Err(Error::Size {
            op: "softmax_cross_entropy",
            left: n,
            right: labels.len(),
        });
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Index {
                op: "softmax_cross_entropy",
                index: label,
                bound: k,
            });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[label] - max - log_sum;

        let g = grad.row_mut(i);
        softmax_in_place(g);
        g[label] -= 1.0;
    }
    let inv_n = 1.0 / n as f64;
    for v in grad.data_mut() {
        *v *= inv_n;
    }
    Ok((loss * inv_n, grad))
}

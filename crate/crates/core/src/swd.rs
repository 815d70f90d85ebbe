//! Sliced Wasserstein distance between two equally sized point clouds.
//!
//! Both clouds are projected onto `L` random unit directions. Along each
//! direction the one-dimensional optimal coupling pairs the i-th smallest
//! source projection with the i-th smallest target projection, so the 1D
//! Wasserstein cost is a sum over sorted pairs. The estimate averages that
//! cost over directions:
//!
//! ```text
//! SW ≈ (1/L) Σ_l c · Σ_i |⟨γ_l, xs[s_l[i]]⟩ − ⟨γ_l, xt[t_l[i]]⟩|^p
//! ```
//!
//! where `s_l`, `t_l` are the sorting permutations and `c` is `1` in
//! [`Normalization::Sum`] mode or `1/n` in [`Normalization::Mean`] mode.
//!
//! The sort permutations are kept in the [`SwdEstimate`] so that
//! [`swd_backward`] can differentiate through the fixed coupling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul, matmul_nt, Tensor};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Sum over sorted pairs.
    Sum,
    /// Mean over sorted pairs; keeps the loss scale independent of batch size.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwdConfig {
    pub num_projections: usize,
    pub p: f64,
    pub normalization: Normalization,
    pub seed: u64,
}

impl Default for SwdConfig {
    fn default() -> Self {
        Self {
            num_projections: 128,
            p: 2.0,
            normalization: Normalization::Mean,
            seed: 0,
        }
    }
}

impl SwdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_projections == 0 {
            return Err(Error::Precondition("num_projections must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Precondition(format!("exponent p must be > 0, got {}", self.p)));
        }
        Ok(())
    }
}

/// `L` directions on the unit sphere `S^{f-1}`, stored as rows of an `L×f` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    directions: Tensor,
}

impl ProjectionSet {
    /// Draws `count` i.i.d. uniform directions in dimension `dim` by
    /// normalizing standard-normal vectors.
    pub fn sample(count: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Precondition("projection dimension must be at least 1".into()));
        }
        if count == 0 {
            return Err(Error::Precondition("at least one projection is required".into()));
        }
        let mut rng = stream_rng(seed, Stream::Projections, count as u64, dim as u64);
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                // Norms this small have probability ~0; redraw instead of dividing.
                if norm > 1e-12 {
                    data.extend(v.iter().map(|x| x / norm));
                    break;
                }
            }
        }
        Ok(Self {
            directions: Tensor::from_vec(&[count, dim], data)?,
        })
    }

    pub fn from_directions(directions: Tensor) -> Result<Self> {
        if directions.shape().len() != 2 || directions.rows() == 0 || directions.cols() == 0 {
            return Err(Error::Precondition(format!(
                "directions must be a non-empty matrix, got {:?}",
                directions.shape()
            )));
        }
        for l in 0..directions.rows() {
            let norm = directions.row(l).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Precondition(format!("direction {l} has norm {norm}")));
            }
        }
        Ok(Self { directions })
    }

    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn directions(&self) -> &Tensor {
        &self.directions
    }

    pub fn direction(&self, l: usize) -> &[f64] {
        self.directions.row(l)
    }
}

/// Result of [`swd_estimate_with`]: the value plus everything the backward
/// pass needs.
#[derive(Debug, Clone)]
pub struct SwdEstimate {
    pub value: f64,
    /// `source_order[l][i]` is the row of `xs` with the i-th smallest projection on direction `l`.
    pub source_order: Vec<Vec<usize>>,
    pub target_order: Vec<Vec<usize>>,
    pub projections: ProjectionSet,
}

fn pair_cost(diff: f64, p: f64) -> f64 {
    if p == 2.0 {
        diff * diff
    } else {
        diff.abs().powf(p)
    }
}

// d/d(diff) |diff|^p
fn pair_cost_derivative(diff: f64, p: f64) -> f64 {
    if p == 2.0 {
        2.0 * diff
    } else if diff == 0.0 {
        0.0
    } else {
        p * diff.abs().powf(p - 1.0) * diff.signum()
    }
}

fn normalizer(norm: Normalization, n: usize) -> f64 {
    match norm {
        Normalization::Sum => 1.0,
        Normalization::Mean => 1.0 / n as f64,
    }
}

/// Stable ascending argsort; ties keep their original index order.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Closed-form Wasserstein-p cost between two equally sized 1D samples: sort
/// both and sum `|a₍ᵢ₎ − b₍ᵢ₎|^p` (divided by `n` in mean mode).
pub fn wasserstein_1d(a: &[f64], b: &[f64], p: f64, normalization: Normalization) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Size {
            op: "wasserstein_1d",
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("wasserstein_1d"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let total: f64 = sa.iter().zip(&sb).map(|(x, y)| pair_cost(x - y, p)).sum();
    Ok(total * normalizer(normalization, a.len()))
}

fn check_inputs(xs: &Tensor, xt: &Tensor, proj: &ProjectionSet) -> Result<()> {
    if xs.rows() != xt.rows() {
        return Err(Error::Size {
            op: "swd_estimate",
            left: xs.rows(),
            right: xt.rows(),
        });
    }
    if xs.rows() == 0 {
        return Err(Error::EmptyInput("swd_estimate"));
    }
    if xs.cols() != proj.dim() || xt.cols() != proj.dim() {
        return Err(Error::shape("swd_estimate", xs.shape(), proj.directions().shape()));
    }
    Ok(())
}

/// Samples `cfg.num_projections` directions from `cfg.seed` and estimates the SWD.
pub fn swd_estimate(xs: &Tensor, xt: &Tensor, cfg: &SwdConfig) -> Result<SwdEstimate> {
    cfg.validate()?;
    if xs.cols() == 0 {
        return Err(Error::Precondition("samples must have at least one feature".into()));
    }
    let proj = ProjectionSet::sample(cfg.num_projections, xs.cols(), cfg.seed)?;
    swd_estimate_with(xs, xt, proj, cfg)
}

/// SWD estimate with a caller-supplied projection set. Only `cfg.p` and
/// `cfg.normalization` are read.
pub fn swd_estimate_with(xs: &Tensor, xt: &Tensor, projections: ProjectionSet, cfg: &SwdConfig) -> Result<SwdEstimate> {
    check_inputs(xs, xt, &projections)?;
    let n = xs.rows();
    let num = projections.len();
    // n×L matrices of projected coordinates.
    let ps = matmul_nt(xs, projections.directions())?;
    let pt = matmul_nt(xt, projections.directions())?;

    let mut source_order = Vec::with_capacity(num);
    let mut target_order = Vec::with_capacity(num);
    let mut total = 0.0;
    let mut col_s = vec![0.0; n];
    let mut col_t = vec![0.0; n];
    for l in 0..num {
        for i in 0..n {
            col_s[i] = ps.get(i, l);
            col_t[i] = pt.get(i, l);
        }
        let so = argsort(&col_s);
        let to = argsort(&col_t);
        let cost: f64 = so
            .iter()
            .zip(&to)
            .map(|(&a, &b)| pair_cost(col_s[a] - col_t[b], cfg.p))
            .sum();
        total += cost;
        source_order.push(so);
        target_order.push(to);
    }
    let value = total * normalizer(cfg.normalization, n) / num as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("swd_estimate"));
    }
    Ok(SwdEstimate {
        value,
        source_order,
        target_order,
        projections,
    })
}

/// Gradient of the estimate with respect to both point clouds, holding the
/// sorting permutations recorded in `estimate` fixed.
pub fn swd_backward(estimate: &SwdEstimate, xs: &Tensor, xt: &Tensor, cfg: &SwdConfig) -> Result<(Tensor, Tensor)> {
    let proj = &estimate.projections;
    check_inputs(xs, xt, proj)?;
    let n = xs.rows();
    let num = proj.len();
    let consistent = estimate.source_order.len() == num
        && estimate.target_order.len() == num
        && estimate
            .source_order
            .iter()
            .chain(&estimate.target_order)
            .all(|o| o.len() == n);
    if !consistent {
        return Err(Error::Consistency(format!(
            "estimate holds permutations for {} directions, inputs have {n} rows",
            estimate.source_order.len()
        )));
    }

    let ps = matmul_nt(xs, proj.directions())?;
    let pt = matmul_nt(xt, proj.directions())?;
    let scale = normalizer(cfg.normalization, n) / num as f64;
    // Coefficient of γ_l in the gradient of row i, for each side.
    let mut coeff_s = Tensor::zeros(&[n, num]);
    let mut coeff_t = Tensor::zeros(&[n, num]);
    for l in 0..num {
        for (&a, &b) in estimate.source_order[l].iter().zip(&estimate.target_order[l]) {
            if a >= n || b >= n {
                return Err(Error::Consistency("permutation index out of range".into()));
            }
            let g = scale * pair_cost_derivative(ps.get(a, l) - pt.get(b, l), cfg.p);
            coeff_s.set(a, l, coeff_s.get(a, l) + g);
            coeff_t.set(b, l, coeff_t.get(b, l) - g);
        }
    }
    Ok((
        matmul(&coeff_s, proj.directions())?,
        matmul(&coeff_t, proj.directions())?,
    ))
}

/// Spread of the Monte-Carlo estimate at one projection count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub num_projections: usize,
    pub mean: f64,
    pub std: f64,
}

/// For each projection count, re-estimates the SWD under `num_seeds`
/// independent direction draws and reports the sample mean and standard
/// deviation of the estimates.
pub fn mc_convergence_probe(
    xs: &Tensor,
    xt: &Tensor,
    projection_counts: &[usize],
    num_seeds: usize,
    cfg: &SwdConfig,
) -> Result<Vec<ProbePoint>> {
    if num_seeds < 2 {
        return Err(Error::Precondition("convergence probe needs at least 2 seeds".into()));
    }
    if projection_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Precondition("projection counts must be ascending".into()));
    }
    projection_counts
        .iter()
        .map(|&count| {
            let values = (0..num_seeds as u64)
                .map(|s| {
                    let seed = crate::rng::derive_seed(cfg.seed, Stream::Projections, count as u64, s);
                    let proj = ProjectionSet::sample(count, xs.cols(), seed)?;
                    Ok(swd_estimate_with(xs, xt, proj, cfg)?.value)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
            Ok(ProbePoint {
                num_projections: count,
                mean,
                std: var.sqrt(),
            })
        })
        .collect()
}

//! Low-dimensional source/target pairs with a known, label-preserving shift.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::rng::derive_seed;

/// Generator name and parameters; together with a seed this reproduces a
/// [`DomainPair`] exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `k` isotropic Gaussian blobs evenly spaced on a circle in the first two
    /// coordinates; the target is rotated about the origin.
    GaussianShift {
        n_per_class: usize,
        num_classes: usize,
        dim: usize,
        angle_deg: f64,
        radius: f64,
        noise: f64,
    },
    /// Two interleaved half circles; the target is rotated about the centre of
    /// the moons and then translated.
    TwoMoons {
        n: usize,
        rotation_deg: f64,
        translation: [f64; 2],
        noise: f64,
    },
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::GaussianShift { .. } => "gaussian-shift",
            GeneratorSpec::TwoMoons { .. } => "two-moons",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<DomainPair> {
        match *self {
            GeneratorSpec::GaussianShift {
                n_per_class,
                num_classes,
                dim,
                angle_deg,
                radius,
                noise,
            } => gen_gaussian_shift(n_per_class, num_classes, dim, angle_deg, radius, noise, seed),
            GeneratorSpec::TwoMoons {
                n,
                rotation_deg,
                translation,
                noise,
            } => gen_two_moons_shift(n, rotation_deg, translation, noise, seed),
        }
    }
}

/// A labeled source domain and a target domain whose labels are reserved for
/// evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub spec: GeneratorSpec,
    pub seed: u64,
}

fn domain_rng(seed: u64, domain: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(seed, crate::rng::Stream::Data, 0, domain))
}

fn rotate_about(point: &mut [f64], center: [f64; 2], angle_rad: f64) {
    let (s, c) = angle_rad.sin_cos();
    let (x, y) = (point[0] - center[0], point[1] - center[1]);
    point[0] = center[0] + c * x - s * y;
    point[1] = center[1] + s * x + c * y;
}

fn blobs(
    n_per_class: usize,
    k: usize,
    dim: usize,
    radius: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset> {
    let mut data = Vec::with_capacity(n_per_class * k * dim);
    let mut labels = Vec::with_capacity(n_per_class * k);
    for class in 0..k {
        let phi = 2.0 * PI * class as f64 / k as f64;
        let center = [radius * phi.cos(), radius * phi.sin()];
        for _ in 0..n_per_class {
            for j in 0..dim {
                let mean = center.get(j).copied().unwrap_or(0.0);
                data.push(mean + noise * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::from_vec(&[n_per_class * k, dim], data)?, labels, k)
}

pub fn gen_gaussian_shift(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    angle_deg: f64,
    radius: f64,
    noise: f64,
    seed: u64,
) -> Result<DomainPair> {
    if num_classes < 2 || dim < 2 || n_per_class == 0 {
        return Err(Error::Precondition(format!(
            "gaussian-shift needs k ≥ 2, d ≥ 2, n ≥ 1 (got k={num_classes}, d={dim}, n={n_per_class})"
        )));
    }
    if !(radius > 0.0 && noise >= 0.0 && angle_deg.is_finite()) {
        return Err(Error::Precondition(
            "gaussian-shift needs radius > 0, noise ≥ 0, finite angle".into(),
        ));
    }
    let source = blobs(n_per_class, num_classes, dim, radius, noise, &mut domain_rng(seed, 0))?;
    let mut target = blobs(n_per_class, num_classes, dim, radius, noise, &mut domain_rng(seed, 1))?;
    let angle = angle_deg.to_radians();
    for i in 0..target.len() {
        rotate_about(target.features.row_mut(i), [0.0, 0.0], angle);
    }
    Ok(DomainPair {
        source,
        target,
        spec: GeneratorSpec::GaussianShift {
            n_per_class,
            num_classes,
            dim,
            angle_deg,
            radius,
            noise,
        },
        seed,
    })
}

/// Centre of the noiseless two-moons point set.
pub const MOONS_CENTER: [f64; 2] = [0.5, 0.25];

fn moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
    let n_upper = n - n / 2;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n_upper);
        let t = rng.random_range(0.0..PI);
        let (x, y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x + noise * rng.sample::<f64, _>(StandardNormal));
        data.push(y + noise * rng.sample::<f64, _>(StandardNormal));
        labels.push(class);
    }
    LabeledDataset::new(Tensor::from_vec(&[n, 2], data)?, labels, 2)
}

pub fn gen_two_moons_shift(
    n: usize,
    rotation_deg: f64,
    translation: [f64; 2],
    noise: f64,
    seed: u64,
) -> Result<DomainPair> {
    if n < 10 {
        return Err(Error::Precondition(format!("two-moons needs n ≥ 10, got {n}")));
    }
    if !(noise >= 0.0 && rotation_deg.is_finite() && translation.iter().all(|v| v.is_finite())) {
        return Err(Error::Precondition(
            "two-moons needs noise ≥ 0 and finite transform".into(),
        ));
    }
    let source = moons(n, noise, &mut domain_rng(seed, 0))?;
    let mut target = moons(n, noise, &mut domain_rng(seed, 1))?;
    let angle = rotation_deg.to_radians();
    for i in 0..target.len() {
        let row = target.features.row_mut(i);
        rotate_about(row, MOONS_CENTER, angle);
        row[0] += translation[0];
        row[1] += translation[1];
    }
    Ok(DomainPair {
        source,
        target,
        spec: GeneratorSpec::TwoMoons {
            n,
            rotation_deg,
            translation,
            noise,
        },
        seed,
    })
}

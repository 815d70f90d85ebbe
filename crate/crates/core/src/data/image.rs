//! Grayscale image preprocessing and augmentation. Images are rows of a
//! matrix, flattened row-major, with values in `[0, 1]`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::rng::{stream_rng, Stream};

/// Bilinear sample with half-pixel centres; coordinates outside the image
/// read as `fill`.
fn sample_bilinear(img: &[f64], h: usize, w: usize, y: f64, x: f64, fill: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (dy, dx) = (y - y0, x - x0);
    let px = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            fill
        } else {
            img[yy as usize * w + xx as usize]
        }
    };
    let top = px(y0, x0) * (1.0 - dx) + px(y0, x0 + 1.0) * dx;
    let bottom = px(y0 + 1.0, x0) * (1.0 - dx) + px(y0 + 1.0, x0 + 1.0) * dx;
    top * (1.0 - dy) + bottom * dy
}

/// Resizes one `h×w` image to `out_h×out_w`. Source coordinates are clamped
/// to the image, so borders replicate edge pixels.
pub fn resize_bilinear(img: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        for ox in 0..out_w {
            let x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            // Clamped coordinates never leave the image; the fill is unused.
            out.push(sample_bilinear(img, h, w, y, x, 0.0).clamp(0.0, 1.0));
        }
    }
    out
}

fn pad_to_square(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize) {
    let side = h.max(w);
    if h == w {
        return (img.to_vec(), side);
    }
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let mut out = vec![0.0; side * side];
    for y in 0..h {
        out[(top + y) * side + left..(top + y) * side + left + w].copy_from_slice(&img[y * w..(y + 1) * w]);
    }
    (out, side)
}

/// Zero-pads images to square, resizes them to `target_size × target_size`
/// and optionally keeps a seeded random subset of exactly `subset_n` items.
pub fn preprocess(
    dataset: &LabeledDataset,
    target_size: usize,
    subset_n: Option<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    let (h, w) = dataset
        .image_shape
        .ok_or_else(|| Error::Precondition("preprocess needs image data".into()))?;
    if target_size == 0 {
        return Err(Error::Precondition("target size must be positive".into()));
    }
    let indices: Vec<usize> = match subset_n {
        Some(n) if n > dataset.len() => {
            return Err(Error::Precondition(format!(
                "subset of {n} requested from {} items",
                dataset.len()
            )))
        }
        Some(n) => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut stream_rng(seed, Stream::Subsample, 0, 0));
            idx.truncate(n);
            idx
        }
        None => (0..dataset.len()).collect(),
    };
    let mut data = Vec::with_capacity(indices.len() * target_size * target_size);
    for &i in &indices {
        let (square, side) = pad_to_square(dataset.features.row(i), h, w);
        if side == target_size {
            data.extend_from_slice(&square);
        } else {
            data.extend(resize_bilinear(&square, side, side, target_size, target_size));
        }
    }
    let features = Tensor::from_vec(&[indices.len(), target_size * target_size], data)?;
    let labels = indices.iter().map(|&i| dataset.labels[i]).collect();
    LabeledDataset::new(features, labels, dataset.num_classes)?.with_image_shape(target_size, target_size)
}

/// Per-transform settings; `None` disables a transform. Geometric magnitudes
/// are maximum absolute values, sampled uniformly per image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Maximum shift in pixels along each axis.
    pub translation: Option<f64>,
    /// Maximum rotation in degrees.
    pub rotation: Option<f64>,
    /// Maximum horizontal shear factor.
    pub skew: Option<f64>,
    /// Maximum relative zoom; the scale is drawn from `[1 − z, 1 + z]`.
    pub zoom: Option<f64>,
    /// Standard deviation of additive Gaussian noise.
    pub gaussian_noise: Option<f64>,
    /// Per-pixel probability of being replaced by 0 or 1 (fair coin).
    pub binomial_noise: Option<f64>,
    /// Probability that an image is inverted (`x → 1 − x`).
    pub invert: Option<f64>,
}

impl AugmentConfig {
    /// ±2 px translation, ±15° rotation, σ = 0.1 noise; the other transforms mild.
    pub fn standard() -> Self {
        Self {
            translation: Some(2.0),
            rotation: Some(15.0),
            skew: Some(0.1),
            zoom: Some(0.1),
            gaussian_noise: Some(0.1),
            binomial_noise: Some(0.01),
            invert: Some(0.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let magnitudes = [
            self.translation,
            self.rotation,
            self.skew,
            self.zoom,
            self.gaussian_noise,
        ];
        if magnitudes.iter().flatten().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::Precondition(
                "augmentation magnitudes must be finite and ≥ 0".into(),
            ));
        }
        if self.zoom.is_some_and(|z| z >= 1.0) {
            return Err(Error::Precondition("zoom must be < 1".into()));
        }
        let probabilities = [self.binomial_noise, self.invert];
        if probabilities.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Precondition(
                "augmentation probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn has_geometry(&self) -> bool {
        self.translation.is_some() || self.rotation.is_some() || self.skew.is_some() || self.zoom.is_some()
    }
}

/// `x → 1 − x` for every pixel.
pub fn invert_pixels(img: &mut [f64]) {
    for v in img {
        *v = 1.0 - *v;
    }
}

fn symmetric<R: Rng>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

fn affine_warp<R: Rng>(img: &[f64], h: usize, w: usize, cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let ty = cfg.translation.map_or(0.0, |m| symmetric(rng, m));
    let tx = cfg.translation.map_or(0.0, |m| symmetric(rng, m));
    let theta = cfg.rotation.map_or(0.0, |m| symmetric(rng, m)).to_radians();
    let shear = cfg.skew.map_or(0.0, |m| symmetric(rng, m));
    let scale = 1.0 + cfg.zoom.map_or(0.0, |m| symmetric(rng, m));

    // Forward map A = R(θ) · Shear · Scale about the centre, then translate.
    let (s, c) = theta.sin_cos();
    let a = [
        [c * scale, (c * shear - s) * scale],
        [s * scale, (s * shear + c) * scale],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for oy in 0..h {
        for ox in 0..w {
            let (px, py) = (ox as f64 - cx - tx, oy as f64 - cy - ty);
            let sx = inv[0][0] * px + inv[0][1] * py + cx;
            let sy = inv[1][0] * px + inv[1][1] * py + cy;
            out.push(sample_bilinear(img, h, w, sy, sx, 0.0));
        }
    }
    out
}

/// Applies independently sampled transforms from the enabled set to every
/// image of `batch` and clamps pixels to `[0, 1]`. Deterministic per seed.
pub fn augment(batch: &Tensor, image_shape: Option<(usize, usize)>, cfg: &AugmentConfig, seed: u64) -> Result<Tensor> {
    let (h, w) = image_shape.ok_or_else(|| Error::Precondition("augmentation needs image data".into()))?;
    if h * w != batch.cols() {
        return Err(Error::shape("augment", &[h, w], batch.shape()));
    }
    cfg.validate()?;
    let mut out = batch.clone();
    for i in 0..batch.rows() {
        let mut rng = stream_rng(seed, Stream::Augment, i as u64, 0);
        let row = out.row_mut(i);
        if cfg.has_geometry() {
            let warped = affine_warp(row, h, w, cfg, &mut rng);
            row.copy_from_slice(&warped);
        }
        if let Some(sigma) = cfg.gaussian_noise {
            for v in row.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if let Some(q) = cfg.binomial_noise {
            for v in row.iter_mut() {
                if rng.random_bool(q) {
                    *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
        if let Some(p) = cfg.invert {
            if rng.random_bool(p) {
                invert_pixels(row);
            }
        }
        for v in row.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

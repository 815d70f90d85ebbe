//! Datasets, synthetic domain-shift generators, IDX ingestion, image
//! preprocessing and augmentation, and the CSV sample format.
//!
//! Training code only ever receives target data as an [`UnlabeledDataset`];
//! target labels stay in the [`LabeledDataset`] used for evaluation.

pub mod csv_io;
pub mod idx;
pub mod image;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub use self::image::{augment, preprocess, resize_bilinear, AugmentConfig};
pub use csv_io::{read_feature_csv, read_labeled_csv, write_labeled_csv};
pub use idx::{load_idx, read_idx, write_idx, IdxArray};
pub use synthetic::{gen_gaussian_shift, gen_two_moons_shift, DomainPair, GeneratorSpec};

/// Samples as rows of an `n×d` matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `(height, width)` when each row is a flattened grayscale image.
    pub image_shape: Option<(usize, usize)>,
}

/// Samples without labels; the only form in which target data reaches training.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    pub features: Tensor,
    pub image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Precondition(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Size {
                op: "LabeledDataset::new",
                left: features.rows(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index {
                op: "LabeledDataset::new",
                index: bad,
                bound: num_classes,
            });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.dim() {
            return Err(Error::shape("with_image_shape", &[height, width], &[self.dim()]));
        }
        self.image_shape = Some((height, width));
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features.clone(),
            image_shape: self.image_shape,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        })
    }

    /// Row indices of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }
}

impl UnlabeledDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

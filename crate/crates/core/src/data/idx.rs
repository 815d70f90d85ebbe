//! IDX files as distributed for MNIST: a big-endian header `0x00 0x00 type
//! ndim`, `ndim` big-endian `u32` sizes, then the raw payload. Only the
//! unsigned-byte type (`0x08`) is supported.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
    if magic & 0xFFFF_FF00 != 0x0000_0800 || magic & 0xFF == 0 {
        return Err(Error::format(path, format!("unsupported IDX magic 0x{magic:08x}")));
    }
    let ndim = (magic & 0xFF) as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::format(path, "truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(path, "IDX dimensions overflow"))?;
    let payload = &bytes[header_len..];
    if payload.len() < count {
        return Err(Error::format(
            path,
            format!("truncated IDX payload: expected {count} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > count {
        return Err(Error::format(path, "trailing bytes after IDX payload"));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn idx_to_bytes(array: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&array.magic().to_be_bytes());
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

pub fn write_idx(array: &IdxArray, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, idx_to_bytes(array)).map_err(|e| Error::io(path, e))
}

/// Loads an image file (magic `0x00000803`) and label file (`0x00000801`)
/// into a dataset with pixels scaled to `[0, 1]`. The class count is one
/// more than the largest label, and at least 10.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = read_idx(images)?;
    if img.magic() != IMAGES_MAGIC {
        return Err(Error::format(
            images,
            format!("expected image magic 0x{IMAGES_MAGIC:08x}, found 0x{:08x}", img.magic()),
        ));
    }
    let lab = read_idx(labels)?;
    if lab.magic() != LABELS_MAGIC {
        return Err(Error::format(
            labels,
            format!("expected label magic 0x{LABELS_MAGIC:08x}, found 0x{:08x}", lab.magic()),
        ));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != n {
        return Err(Error::format(labels, format!("{} labels for {n} images", lab.dims[0])));
    }
    let features = Tensor::from_vec(&[n, h * w], img.data.iter().map(|&b| f64::from(b) / 255.0).collect())?;
    let labels: Vec<usize> = lab.data.iter().map(|&b| usize::from(b)).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1).max(10);
    LabeledDataset::new(features, labels, k)?.with_image_shape(h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = IdxArray {
            dims: vec![3, 2, 2],
            data: vec![0, 255, 128, 1, 2, 3, 4, 5, 255, 0, 0, 255],
        };
        let labels = IdxArray {
            dims: vec![3],
            data: vec![7, 0, 9],
        };
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        write_idx(&images, &ip).unwrap();
        write_idx(&labels, &lp).unwrap();
        (ip, lp)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let bytes = std::fs::read(&ip).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = read_idx(&ip).unwrap();
        assert_eq!(idx_to_bytes(&back), bytes);

        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.image_shape, Some((2, 2)));
        assert_eq!(ds.labels, vec![7, 0, 9]);
        assert_eq!(ds.features.row(0), &[0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
    }

    #[test]
    fn wrong_magic_names_observed_value() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let err = load_idx(&lp, &ip).unwrap_err().to_string();
        assert!(err.contains("0x00000801"), "{err}");
        std::fs::write(&ip, [0u8, 0, 9, 3, 0, 0, 0, 0]).unwrap();
        let err = read_idx(&ip).unwrap_err().to_string();
        assert!(err.contains("0x00000903"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path());
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_idx(&ip), Err(Error::Format { .. })));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        write_idx(
            &IdxArray {
                dims: vec![2],
                data: vec![1, 2],
            },
            &lp,
        )
        .unwrap();
        assert!(load_idx(&ip, &lp).is_err());
    }
}

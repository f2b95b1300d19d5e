//! MNIST IDX container parsing and the in-memory dataset.
//!
//! Images stay in their original u8 form; [`Dataset::image`] converts to
//! f64 in [0, 1] on demand so a full 60k-image set costs ~47 MB.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Labeled image collection, single channel.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Dataset> {
        if labels.is_empty() {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if pixels.len() != labels.len() * height * width {
            return Err(Error::InvalidData(format!(
                "{} pixels do not fit {} images of {height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            height,
            width,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Image `i` as a (1, h, w) tensor scaled to [0, 1].
    pub fn image(&self, i: usize) -> Tensor {
        let n = self.height * self.width;
        let data: Vec<f64> = self.pixels[i * n..(i + 1) * n]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        Tensor::from_vec(vec![1, self.height, self.width], data).unwrap()
    }

    /// Raw bytes of image `i`.
    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// First `n` images as a new dataset.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per = self.height * self.width;
        Dataset {
            height: self.height,
            width: self.width,
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Mean pixel intensity over the whole set, in [0, 1].
    pub fn mean_pixel(&self) -> f64 {
        let sum: u64 = self.pixels.iter().map(|&b| b as u64).sum();
        sum as f64 / (self.pixels.len() as f64 * 255.0)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("file truncated, needed {end} bytes"),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX3 image file (big-endian magic 0x00000803).
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let magic = read_u32_be(&bytes, 0, &name)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            &name,
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&bytes, 4, &name)? as usize;
    let h = read_u32_be(&bytes, 8, &name)? as usize;
    let w = read_u32_be(&bytes, 12, &name)? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() < expected {
        return Err(Error::format(
            &name,
            bytes.len() as u64,
            format!("truncated image data, expected {expected} bytes"),
        ));
    }
    Ok((n, h, w, bytes[16..expected].to_vec()))
}

/// Parses an IDX1 label file (big-endian magic 0x00000801).
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let magic = read_u32_be(&bytes, 0, &name)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            &name,
            0,
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let n = read_u32_be(&bytes, 4, &name)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::format(
            &name,
            bytes.len() as u64,
            format!("truncated label data, expected {expected} bytes"),
        ));
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads an image/label pair into a dataset, optionally truncated to the
/// first `limit` examples.
pub fn load_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let (n, h, w, pixels) = load_idx_images(&images_path)?;
    let labels = load_idx_labels(&labels_path)?;
    if labels.len() != n {
        return Err(Error::InvalidData(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let ds = Dataset::new(h, w, pixels, labels)?;
    Ok(match limit {
        Some(l) => ds.take(l),
        None => ds,
    })
}

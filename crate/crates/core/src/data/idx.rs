//! IDX (MNIST-style) image and label files.
//!
//! Both files are big-endian: a magic word (`0x00000803` for 3-D `u8`
//! images, `0x00000801` for 1-D `u8` labels), the dimension sizes, then raw
//! bytes.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Idx(format!("{} file truncated in header", self.what)))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len);
        end.and_then(|end| self.bytes.get(self.pos..end)).ok_or_else(|| {
            Error::Idx(format!(
                "{} file truncated: need {len} data bytes, have {}",
                self.what,
                self.bytes.len().saturating_sub(self.pos)
            ))
        })
    }
}

/// Parses an image file into `(count, pixels_per_image, bytes)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "images",
    };
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Idx(format!("bad images magic {magic:#010x}")));
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = rows * cols;
    if count == 0 || pixels == 0 {
        return Err(Error::Idx("images file declares an empty tensor".into()));
    }
    Ok((count, pixels, r.body(count * pixels)?))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "labels",
    };
    let magic = r.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Idx(format!("bad labels magic {magic:#010x}")));
    }
    let count = r.u32()? as usize;
    r.body(count)
}

/// Builds a dataset from in-memory IDX files. Pixels are scaled to `[0, 1]`.
/// The class count is one more than the largest label seen.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, pixels, body) = parse_images(images)?;
    let label_bytes = parse_labels(labels)?;
    if label_bytes.len() != count {
        return Err(Error::Idx(format!(
            "count mismatch: {count} images vs {} labels",
            label_bytes.len()
        )));
    }
    let features: Vec<f64> = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Tensor::new(vec![count, pixels], features)?, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    dataset_from_idx(&images, &labels)
}

/// Serializes `u8` images (`count × rows × cols`) in IDX form.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for dim in [count, rows, cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

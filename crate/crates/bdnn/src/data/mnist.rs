//! IDX-format reader and writer for MNIST-style image/label files.
//!
//! Images: big-endian magic 2051, count, rows, cols, then raw bytes.
//! Labels: big-endian magic 2049, count, then one byte per label.
//! Parsing is byte-exact: re-serializing a parsed file reproduces it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Raw grayscale images with labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayDataset {
    pub rows: usize,
    pub cols: usize,
    /// count × rows × cols bytes, image-major.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl GrayDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let px = self.rows * self.cols;
        &self.pixels[i * px..(i + 1) * px]
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(Error::Dataset(format!(
                "{}: truncated at byte {} (needed 4 more)",
                self.what, self.pos
            )));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Dataset(format!(
                "{}: truncated at byte {} (needed {} more, have {})",
                self.what,
                self.pos,
                n,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Dataset(format!(
                "{}: {} trailing bytes after offset {}",
                self.what,
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

pub fn parse_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut c = Cursor { bytes, pos: 0, what };
    let magic = c.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad image magic, expected {IMAGES_MAGIC}, got {magic}"
        )));
    }
    let count = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    let pixels = c.take(count * rows * cols)?.to_vec();
    c.finish()?;
    Ok((count, rows, cols, pixels))
}

pub fn parse_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0, what };
    let magic = c.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad label magic, expected {LABELS_MAGIC}, got {magic}"
        )));
    }
    let count = c.u32_be()? as usize;
    let labels = c.take(count)?.to_vec();
    c.finish()?;
    Ok(labels)
}

/// Loads an image/label file pair, checking that the counts match.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<GrayDataset> {
    let image_bytes = fs::read(images_path)?;
    let (count, rows, cols, pixels) =
        parse_images(&image_bytes, &images_path.display().to_string())?;
    let label_bytes = fs::read(labels_path)?;
    let labels = parse_labels(&label_bytes, &labels_path.display().to_string())?;
    if labels.len() != count {
        return Err(Error::Dataset(format!(
            "count mismatch: {} images but {} labels",
            count,
            labels.len()
        )));
    }
    Ok(GrayDataset {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Serializes images to IDX bytes (the exact inverse of [`parse_images`]).
pub fn write_images(ds: &GrayDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + ds.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    out.extend_from_slice(&(ds.rows as u32).to_be_bytes());
    out.extend_from_slice(&(ds.cols as u32).to_be_bytes());
    out.extend_from_slice(&ds.pixels);
    out
}

/// Serializes labels to IDX bytes (the exact inverse of [`parse_labels`]).
pub fn write_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

//! CIFAR-10 binary-format reader and writer.
//!
//! Each record is one label byte followed by 3,072 channel-major pixel
//! bytes (1,024 red, 1,024 green, 1,024 blue) for a 32x32 image.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const WIDTH: usize = 32;
pub const HEIGHT: usize = 32;
pub const CHANNEL_BYTES: usize = WIDTH * HEIGHT;
pub const RECORD_BYTES: usize = 1 + 3 * CHANNEL_BYTES;

/// 32x32 RGB images with labels, pixels channel-major per record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbDataset {
    /// count × 3072 bytes.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RgbDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Channel-major pixel block of record `i`.
    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * 3 * CHANNEL_BYTES..(i + 1) * 3 * CHANNEL_BYTES]
    }

    /// RGB triple of pixel (y, x) in record `i`.
    pub fn rgb(&self, i: usize, y: usize, x: usize) -> (u8, u8, u8) {
        let img = self.image(i);
        let p = y * WIDTH + x;
        (img[p], img[CHANNEL_BYTES + p], img[2 * CHANNEL_BYTES + p])
    }
}

pub fn parse_batch(bytes: &[u8], what: &str) -> Result<RgbDataset> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Dataset(format!(
            "{what}: file length {} is not a multiple of the {RECORD_BYTES}-byte record \
             (offset of misalignment: {})",
            bytes.len(),
            bytes.len() - bytes.len() % RECORD_BYTES
        )));
    }
    let count = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(count * 3 * CHANNEL_BYTES);
    let mut labels = Vec::with_capacity(count);
    for (i, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0];
        if label >= 10 {
            return Err(Error::Dataset(format!(
                "{what}: record {i} has label {label} (must be < 10), at byte {}",
                i * RECORD_BYTES
            )));
        }
        labels.push(label);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok(RgbDataset { pixels, labels })
}

/// Loads and concatenates one or more batch files.
pub fn load_batches<P: AsRef<Path>>(paths: &[P]) -> Result<RgbDataset> {
    if paths.is_empty() {
        return Err(Error::Dataset("no batch files given".into()));
    }
    let mut all = RgbDataset {
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    for p in paths {
        let bytes = fs::read(p.as_ref())?;
        let batch = parse_batch(&bytes, &p.as_ref().display().to_string())?;
        all.pixels.extend_from_slice(&batch.pixels);
        all.labels.extend_from_slice(&batch.labels);
    }
    Ok(all)
}

/// Serializes to batch bytes (the exact inverse of [`parse_batch`]).
pub fn write_batch(ds: &RgbDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * RECORD_BYTES);
    for i in 0..ds.len() {
        out.push(ds.labels[i]);
        out.extend_from_slice(ds.image(i));
    }
    out
}

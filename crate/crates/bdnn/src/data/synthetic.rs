//! Seeded synthetic datasets in the exact on-disk formats of the real ones.
//!
//! Each class is a fixed random prototype; samples are the prototype with
//! per-pixel noise. Used by tests and benchmarks when the real dataset
//! files are not on disk — the generated bytes go through the same parsers
//! and pipelines as the real files.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::cifar::{RgbDataset, CHANNEL_BYTES};
use crate::data::mnist::GrayDataset;

/// Grayscale class-prototype dataset at the given geometry. Foreground
/// pixels draw from [192, 255], background from [0, 63]; `flip_prob` is the
/// chance a pixel swaps role, so a 128 threshold recovers a noisy prototype.
pub fn gray_prototypes(
    count: usize,
    rows: usize,
    cols: usize,
    classes: usize,
    flip_prob: f64,
    seed: u64,
) -> GrayDataset {
    assert!(classes >= 1 && classes <= 10);
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
    let px = rows * cols;
    // One foreground mask per class, about a third of the pixels lit.
    let prototypes: Vec<Vec<bool>> = (0..classes)
        .map(|_| (0..px).map(|_| proto_rng.random::<f64>() < 0.35).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut pixels = Vec::with_capacity(count * px);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        labels.push(class as u8);
        for &lit in &prototypes[class] {
            let flipped = rng.random::<f64>() < flip_prob;
            let foreground = lit != flipped;
            pixels.push(if foreground {
                rng.random_range(192..=255u16) as u8
            } else {
                rng.random_range(0..=63u16) as u8
            });
        }
    }
    GrayDataset {
        rows,
        cols,
        pixels,
        labels,
    }
}

/// RGB class-prototype dataset in CIFAR geometry (32x32).
pub fn rgb_prototypes(count: usize, classes: usize, noise: f64, seed: u64) -> RgbDataset {
    assert!(classes >= 1 && classes <= 10);
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<u8>> = (0..classes)
        .map(|_| (0..3 * CHANNEL_BYTES).map(|_| proto_rng.random::<u8>()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut pixels = Vec::with_capacity(count * 3 * CHANNEL_BYTES);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % classes;
        labels.push(class as u8);
        for &p in &prototypes[class] {
            let jitter = (rng.random_range(-1.0..1.0) * noise * 255.0) as i16;
            pixels.push((p as i16 + jitter).clamp(0, 255) as u8);
        }
    }
    RgbDataset { pixels, labels }
}

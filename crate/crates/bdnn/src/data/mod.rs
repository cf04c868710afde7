//! Dataset ingestion and preparation.
//!
//! Raw files parse into byte-level datasets ([`mnist::GrayDataset`],
//! [`cifar::RgbDataset`]); the transforms here turn them into sign or real
//! image grids, pad them to a network's input size, and flatten them into
//! training samples (appending the constant +1 input neuron where the
//! network geometry calls for it).

pub mod cifar;
pub mod mnist;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitpack::PackedBits;
use crate::error::{Error, Result};
use crate::math::Sign;
use crate::network::{InputGeometry, NetInput, Network};
use crate::training::Sample;

pub use cifar::RgbDataset;
pub use mnist::GrayDataset;

/// Pixel storage of one image: a sign grid or a real grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageData {
    Binary(Vec<Sign>),
    Real(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    Binary,
    Real,
}

/// A set of single-channel images of uniform geometry with labels in [0, 10).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub kind: ImageKind,
    pub height: usize,
    pub width: usize,
    pub images: Vec<ImageData>,
    pub labels: Vec<u8>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Centered padding to a larger geometry; an odd leftover goes to the
    /// bottom/right. Fill is −1 for sign grids and 0.0 for real grids.
    pub fn pad(&self, target_h: usize, target_w: usize) -> Result<ImageDataset> {
        if target_h < self.height || target_w < self.width {
            return Err(Error::Geometry(format!(
                "cannot pad {}x{} down to {target_h}x{target_w}",
                self.height, self.width
            )));
        }
        if target_h == self.height && target_w == self.width {
            return Ok(self.clone());
        }
        let top = (target_h - self.height) / 2;
        let left = (target_w - self.width) / 2;
        let images = self
            .images
            .iter()
            .map(|img| match img {
                ImageData::Binary(px) => {
                    let mut out = vec![Sign::Minus; target_h * target_w];
                    for y in 0..self.height {
                        for x in 0..self.width {
                            out[(y + top) * target_w + (x + left)] = px[y * self.width + x];
                        }
                    }
                    ImageData::Binary(out)
                }
                ImageData::Real(px) => {
                    let mut out = vec![0.0; target_h * target_w];
                    for y in 0..self.height {
                        for x in 0..self.width {
                            out[(y + top) * target_w + (x + left)] = px[y * self.width + x];
                        }
                    }
                    ImageData::Real(out)
                }
            })
            .collect();
        Ok(ImageDataset {
            kind: self.kind,
            height: target_h,
            width: target_w,
            images,
            labels: self.labels.clone(),
        })
    }

    /// Deterministic random subset of up to `k` items (original order kept).
    pub fn subset(&self, k: usize, seed: u64) -> ImageDataset {
        if k >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(k);
        indices.sort_unstable();
        ImageDataset {
            kind: self.kind,
            height: self.height,
            width: self.width,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Fixed-threshold binarization: pixel ≥ threshold maps to +1, below to −1.
pub fn binarize(ds: &GrayDataset, threshold: u8) -> ImageDataset {
    let px_per = ds.rows * ds.cols;
    let images = (0..ds.len())
        .map(|i| {
            ImageData::Binary(
                ds.pixels[i * px_per..(i + 1) * px_per]
                    .iter()
                    .map(|&p| if p >= threshold { Sign::Plus } else { Sign::Minus })
                    .collect(),
            )
        })
        .collect();
    ImageDataset {
        kind: ImageKind::Binary,
        height: ds.rows,
        width: ds.cols,
        images,
        labels: ds.labels.clone(),
    }
}

/// Luminance grayscale (0.299 R + 0.587 G + 0.114 B) rescaled to [−1, 1].
pub fn grayscale_scaled(ds: &RgbDataset) -> ImageDataset {
    let images = (0..ds.len())
        .map(|i| {
            let mut px = Vec::with_capacity(cifar::HEIGHT * cifar::WIDTH);
            for y in 0..cifar::HEIGHT {
                for x in 0..cifar::WIDTH {
                    let (r, g, b) = ds.rgb(i, y, x);
                    let lum = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                    px.push(lum / 127.5 - 1.0);
                }
            }
            ImageData::Real(px)
        })
        .collect();
    ImageDataset {
        kind: ImageKind::Real,
        height: cifar::HEIGHT,
        width: cifar::WIDTH,
        images,
        labels: ds.labels.clone(),
    }
}

/// Flattens a sign grid row-major and appends the constant +1 input neuron.
pub fn attach_constant_neuron(pixels: &[Sign]) -> Vec<Sign> {
    let mut v = Vec::with_capacity(pixels.len() + 1);
    v.extend_from_slice(pixels);
    v.push(Sign::Plus);
    v
}

/// Prepares a dataset for a network: pads images up to the input geometry
/// when needed, flattens row-major, attaches the constant +1 neuron when the
/// flat input is one longer than the pixel count, and packs binary inputs.
pub fn prepare_samples(ds: &ImageDataset, net: &Network) -> Result<Vec<Sample>> {
    for &label in &ds.labels {
        if label as usize >= net.classes() {
            return Err(Error::LabelOutOfRange {
                label: label as usize,
                classes: net.classes(),
            });
        }
    }
    let hybrid = net.is_hybrid();
    match (hybrid, ds.kind) {
        (true, ImageKind::Binary) => {
            return Err(Error::InputKind(
                "hybrid network expects real-valued images".into(),
            ))
        }
        (false, ImageKind::Real) => {
            return Err(Error::InputKind(
                "pure-binary network expects binarized images".into(),
            ))
        }
        _ => {}
    }

    let ds = match *net.input_geometry() {
        InputGeometry::Flat(n) => {
            let px = ds.height * ds.width;
            if n != px && n != px + 1 {
                return Err(Error::Geometry(format!(
                    "flat input of {n} neurons cannot take {}x{} images ({px} pixels)",
                    ds.height, ds.width
                )));
            }
            ds.clone()
        }
        InputGeometry::Image { maps, h, w } => {
            if maps != 1 {
                return Err(Error::Geometry(
                    "datasets provide single-channel images".into(),
                ));
            }
            ds.pad(h, w)?
        }
    };

    let constant = matches!(
        *net.input_geometry(),
        InputGeometry::Flat(n) if n == ds.height * ds.width + 1
    );

    let mut samples = Vec::with_capacity(ds.len());
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        let input = match img {
            ImageData::Binary(px) => {
                let flat = if constant {
                    attach_constant_neuron(px)
                } else {
                    px.clone()
                };
                NetInput::Binary(PackedBits::from_signs(&flat)?)
            }
            ImageData::Real(px) => {
                if constant {
                    let mut v = px.clone();
                    v.push(1.0);
                    NetInput::Real(v)
                } else {
                    NetInput::Real(px.clone())
                }
            }
        };
        samples.push(Sample {
            input,
            label: label as usize,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::StructureId;

    fn gray(rows: usize, cols: usize, images: &[&[u8]], labels: &[u8]) -> GrayDataset {
        GrayDataset {
            rows,
            cols,
            pixels: images.iter().flat_map(|i| i.iter().copied()).collect(),
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn binarize_threshold_rule() {
        let ds = gray(1, 3, &[&[200, 100, 128]], &[0]);
        let b = binarize(&ds, 128);
        match &b.images[0] {
            ImageData::Binary(px) => {
                assert_eq!(px.as_slice(), &[Sign::Plus, Sign::Minus, Sign::Plus]);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn pad_puts_leftover_bottom_right() {
        let ds = gray(2, 2, &[&[255, 255, 255, 255]], &[1]);
        let b = binarize(&ds, 128);
        let padded = b.pad(3, 3).unwrap();
        match &padded.images[0] {
            ImageData::Binary(px) => {
                // 2x2 of +1 lands in the top-left; the extra row/col of fill
                // sits at the bottom and right.
                let grid: Vec<i8> = px.iter().map(|s| s.value()).collect();
                assert_eq!(grid, vec![1, 1, -1, 1, 1, -1, -1, -1, -1]);
            }
            _ => panic!(),
        }
        // Identity when sizes match.
        assert_eq!(b.pad(2, 2).unwrap(), b);
        assert!(b.pad(1, 3).is_err());
    }

    #[test]
    fn pad_28_to_29_centers_with_bottom_right_extra() {
        let pixels: Vec<u8> = vec![255; 28 * 28];
        let ds = gray(28, 28, &[&pixels], &[0]);
        let padded = binarize(&ds, 128).pad(29, 29).unwrap();
        match &padded.images[0] {
            ImageData::Binary(px) => {
                // Rows 0..28 and columns 0..28 hold image pixels; row 28 and
                // column 28 are fill.
                assert_eq!(px[0], Sign::Plus);
                assert_eq!(px[28], Sign::Minus); // last column of first row
                assert_eq!(px[27 * 29], Sign::Plus); // first column of last image row
                assert!(px[28 * 29..].iter().all(|&s| s == Sign::Minus)); // bottom row
            }
            _ => panic!(),
        }
    }

    #[test]
    fn pad_real_uses_zero_fill() {
        let ds = ImageDataset {
            kind: ImageKind::Real,
            height: 32,
            width: 32,
            images: vec![ImageData::Real(vec![0.5; 32 * 32])],
            labels: vec![0],
        };
        let padded = ds.pad(33, 33).unwrap();
        match &padded.images[0] {
            ImageData::Real(px) => {
                assert_eq!(px[0], 0.5);
                assert_eq!(px[32], 0.0); // right fill column
                assert_eq!(px[31 * 33], 0.5); // last image row
                assert!(px[32 * 33..].iter().all(|&v| v == 0.0)); // bottom fill row
            }
            _ => panic!(),
        }
    }

    #[test]
    fn binarize_and_pad_commute() {
        // Fill −1 corresponds to pixel value 0 below the threshold.
        let pixels: Vec<u8> = (0..16).map(|i| (i * 16) as u8).collect();
        let ds = gray(4, 4, &[&pixels], &[2]);
        let a = binarize(&ds, 128).pad(6, 6).unwrap();
        let padded_gray = {
            let mut out = vec![0u8; 36];
            for y in 0..4 {
                for x in 0..4 {
                    out[(y + 1) * 6 + (x + 1)] = pixels[y * 4 + x];
                }
            }
            gray(6, 6, &[&out], &[2])
        };
        let b = binarize(&padded_gray, 128);
        assert_eq!(a, b);
    }

    #[test]
    fn grayscale_scaling_endpoints() {
        let mut pixels = vec![0u8; 2 * 3 * cifar::CHANNEL_BYTES];
        // Image 0: white; image 1 red channel only.
        for p in 0..3 * cifar::CHANNEL_BYTES {
            pixels[p] = 255;
        }
        for p in 0..cifar::CHANNEL_BYTES {
            pixels[3 * cifar::CHANNEL_BYTES + p] = 255;
        }
        let ds = RgbDataset {
            pixels,
            labels: vec![0, 1],
        };
        let g = grayscale_scaled(&ds);
        match (&g.images[0], &g.images[1]) {
            (ImageData::Real(white), ImageData::Real(red)) => {
                assert!((white[0] - 1.0).abs() < 1e-12);
                let expected = 0.299 * 255.0 / 127.5 - 1.0;
                assert!((red[0] - expected).abs() < 1e-12);
                assert!((red[0] + 0.402).abs() < 1e-3);
            }
            _ => panic!(),
        }
        // Black maps to −1.
        let black = RgbDataset {
            pixels: vec![0u8; 3 * cifar::CHANNEL_BYTES],
            labels: vec![0],
        };
        match &grayscale_scaled(&black).images[0] {
            ImageData::Real(px) => assert!((px[0] + 1.0).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn constant_neuron_appended_last() {
        let px = vec![Sign::Minus; 4];
        let v = attach_constant_neuron(&px);
        assert_eq!(v.len(), 5);
        assert_eq!(v[4], Sign::Plus);
        assert_eq!(v.iter().filter(|&&s| s == Sign::Plus).count(), 1);
    }

    #[test]
    fn subset_is_deterministic() {
        let ds = GrayDataset {
            rows: 1,
            cols: 2,
            pixels: (0..40).map(|i| (i * 6) as u8).collect(),
            labels: (0..20).map(|i| (i % 10) as u8).collect(),
        };
        let b = binarize(&ds, 128);
        let s1 = b.subset(7, 33);
        let s2 = b.subset(7, 33);
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 7);
        let s3 = b.subset(7, 34);
        assert_ne!(s1.labels, s3.labels);
        // Asking for more than available returns everything.
        assert_eq!(b.subset(50, 1).len(), 20);
    }

    #[test]
    fn prepare_for_flat_structure_attaches_constant() {
        let pixels: Vec<u8> = vec![0; 28 * 28];
        let ds = binarize(&gray(28, 28, &[&pixels], &[3]), 128);
        let net = Network::structure(StructureId::A);
        let samples = prepare_samples(&ds, &net).unwrap();
        assert_eq!(samples.len(), 1);
        match &samples[0].input {
            NetInput::Binary(p) => {
                assert_eq!(p.len(), 785);
                // All-dark image: only the constant neuron is +1.
                assert_eq!(p.get(784), Sign::Plus);
                assert_eq!((0..784).filter(|&i| p.get(i) == Sign::Plus).count(), 0);
            }
            _ => panic!(),
        }
        assert_eq!(samples[0].label, 3);
    }

    #[test]
    fn prepare_for_conv_structure_pads() {
        let pixels: Vec<u8> = vec![255; 28 * 28];
        let ds = binarize(&gray(28, 28, &[&pixels], &[1]), 128);
        let net = Network::structure(StructureId::C);
        let samples = prepare_samples(&ds, &net).unwrap();
        match &samples[0].input {
            NetInput::Binary(p) => assert_eq!(p.len(), 29 * 29),
            _ => panic!(),
        }
    }

    #[test]
    fn prepare_rejects_kind_mismatch() {
        let pixels: Vec<u8> = vec![255; 28 * 28];
        let ds = binarize(&gray(28, 28, &[&pixels], &[1]), 128);
        let net = Network::structure(StructureId::E);
        assert!(matches!(
            prepare_samples(&ds, &net),
            Err(Error::InputKind(_))
        ));
    }
}

//! Binary convolution with strided subsampling.
//!
//! There is no pooling: the feature map size is controlled by the stride
//! (default 2, skipping every other pixel). Geometry must divide exactly —
//! `(input_size - kernel) % stride == 0` — so shape errors surface when the
//! layer is built, not silently through implicit padding.

use crate::bitpack::PackedBits;
use crate::error::{Error, Result};
use crate::layers::LayerGradients;
use crate::math::{Sign, SlopeConfig};

/// A convolutional layer with binary kernels.
///
/// Activations are laid out map-major: element `(map, y, x)` of a stack of
/// `maps` h×w grids sits at `(map*h + y)*w + x`. Each output map holds one
/// flattened kernel of length `in_maps * kernel²` (the receptive field),
/// which must be odd.
#[derive(Clone, Debug)]
pub struct ConvBinaryLayer {
    in_maps: usize,
    out_maps: usize,
    kernel: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    shadow: Vec<f64>,
    packed: Vec<PackedBits>,
    stale: bool,
}

pub(crate) fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry("kernel and stride must be positive".into()));
    }
    if kernel > input {
        return Err(Error::Geometry(format!(
            "kernel {kernel} larger than input {input}"
        )));
    }
    if (input - kernel) % stride != 0 {
        return Err(Error::Geometry(format!(
            "({input} - {kernel}) not divisible by stride {stride}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

impl ConvBinaryLayer {
    pub fn new(
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
    ) -> Result<ConvBinaryLayer> {
        if in_maps == 0 || out_maps == 0 {
            return Err(Error::Geometry("map counts must be positive".into()));
        }
        let field = in_maps * kernel * kernel;
        if field % 2 == 0 {
            return Err(Error::EvenFanIn(field));
        }
        let out_h = conv_output_size(in_h, kernel, stride)?;
        let out_w = conv_output_size(in_w, kernel, stride)?;
        let mut layer = ConvBinaryLayer {
            in_maps,
            out_maps,
            kernel,
            stride,
            in_h,
            in_w,
            out_h,
            out_w,
            shadow: vec![0.0; out_maps * field],
            packed: Vec::new(),
            stale: true,
        };
        layer.sync_mirror()?;
        Ok(layer)
    }

    pub fn in_maps(&self) -> usize {
        self.in_maps
    }

    pub fn out_maps(&self) -> usize {
        self.out_maps
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn in_h(&self) -> usize {
        self.in_h
    }

    pub fn in_w(&self) -> usize {
        self.in_w
    }

    pub fn out_h(&self) -> usize {
        self.out_h
    }

    pub fn out_w(&self) -> usize {
        self.out_w
    }

    /// Receptive-field length, the fan-in of every output pixel.
    #[inline]
    pub fn field_len(&self) -> usize {
        self.in_maps * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_maps * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_maps * self.out_h * self.out_w
    }

    pub fn weight_count(&self) -> usize {
        self.out_maps * self.field_len()
    }

    pub fn shadow_kernels(&self) -> &[f64] {
        &self.shadow
    }

    pub fn shadow_kernels_mut(&mut self) -> &mut [f64] {
        self.stale = true;
        &mut self.shadow
    }

    pub(crate) fn set_shadow_kernels(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weight_count() {
            return Err(Error::LengthMismatch {
                expected: self.weight_count(),
                got: weights.len(),
            });
        }
        self.shadow = weights;
        self.stale = true;
        Ok(())
    }

    #[inline]
    pub fn is_synced(&self) -> bool {
        !self.stale
    }

    pub fn sync_mirror(&mut self) -> Result<()> {
        if self.shadow.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shadow kernel weight"));
        }
        let n = self.field_len();
        self.packed = (0..self.out_maps)
            .map(|j| PackedBits::from_reals(&self.shadow[j * n..(j + 1) * n]))
            .collect::<Result<_>>()?;
        self.stale = false;
        Ok(())
    }

    pub fn packed_kernels(&self) -> Result<&[PackedBits]> {
        if self.stale {
            return Err(Error::StaleMirror);
        }
        Ok(&self.packed)
    }

    #[inline]
    fn input_index(&self, map: usize, y: usize, x: usize) -> usize {
        (map * self.in_h + y) * self.in_w + x
    }

    /// Binary forward pass: every output pixel is the majority sign of its
    /// receptive field against the output map's kernel.
    pub fn forward_binary(&self, input: &PackedBits) -> Result<PackedBits> {
        if self.stale {
            return Err(Error::StaleMirror);
        }
        if input.len() != self.in_len() {
            return Err(Error::LengthMismatch {
                expected: self.in_len(),
                got: input.len(),
            });
        }
        let n = self.field_len();
        let mut out = vec![Sign::Minus; self.out_len()];
        let mut patch = vec![Sign::Minus; n];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let mut p = 0;
                for m in 0..self.in_maps {
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            patch[p] = input.get(self.input_index(
                                m,
                                oy * self.stride + ky,
                                ox * self.stride + kx,
                            ));
                            p += 1;
                        }
                    }
                }
                let packed_patch = PackedBits::from_signs(&patch)?;
                for (omap, kernel_bits) in self.packed.iter().enumerate() {
                    let agree = packed_patch.agreement_count(kernel_bits)?;
                    if 2 * agree >= n {
                        out[(omap * self.out_h + oy) * self.out_w + ox] = Sign::Plus;
                    }
                }
            }
        }
        PackedBits::from_signs(&out)
    }

    /// Shadow forward pass over real activations; sign-consistent with the
    /// binary pass.
    pub fn forward_shadow(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_len() {
            return Err(Error::LengthMismatch {
                expected: self.in_len(),
                got: input.len(),
            });
        }
        let n = self.field_len();
        let sx: Vec<i64> = input
            .iter()
            .map(|&v| {
                debug_assert!(v.is_finite());
                if v >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let mut out = vec![0.0; self.out_len()];
        for omap in 0..self.out_maps {
            let row = &self.shadow[omap * n..(omap + 1) * n];
            let sw: Vec<i64> = row.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let mut acc: i64 = 0;
                    let mut p = 0;
                    for m in 0..self.in_maps {
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let ii = self.input_index(
                                    m,
                                    oy * self.stride + ky,
                                    ox * self.stride + kx,
                                );
                                acc += sx[ii] * sw[p];
                                p += 1;
                            }
                        }
                    }
                    out[(omap * self.out_h + oy) * self.out_w + ox] = acc as f64 / n as f64;
                }
            }
        }
        Ok(out)
    }

    /// Surrogate backward pass with weight sharing: kernel gradients sum
    /// over all output positions, input deltas scatter back through the
    /// stride pattern.
    pub fn backward(
        &self,
        input: &[f64],
        output_deltas: &[f64],
        slope: &SlopeConfig,
    ) -> Result<LayerGradients> {
        self.backward_impl(input, output_deltas, slope, true)
    }

    pub(crate) fn backward_impl(
        &self,
        input: &[f64],
        output_deltas: &[f64],
        slope: &SlopeConfig,
        need_input_deltas: bool,
    ) -> Result<LayerGradients> {
        if input.len() != self.in_len() {
            return Err(Error::LengthMismatch {
                expected: self.in_len(),
                got: input.len(),
            });
        }
        if output_deltas.len() != self.out_len() {
            return Err(Error::LengthMismatch {
                expected: self.out_len(),
                got: output_deltas.len(),
            });
        }
        let n = self.field_len();
        let s = slope.value(n);
        let sx: Vec<f64> = input
            .iter()
            .map(|&v| if v >= 0.0 { s } else { -s })
            .collect();

        let mut weight_grads = vec![0.0; self.weight_count()];
        let mut input_deltas = if need_input_deltas {
            vec![0.0; self.in_len()]
        } else {
            Vec::new()
        };

        for omap in 0..self.out_maps {
            let kernel_row = &self.shadow[omap * n..(omap + 1) * n];
            let sw: Vec<f64> = kernel_row
                .iter()
                .map(|&v| if v >= 0.0 { s } else { -s })
                .collect();
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let d = output_deltas[(omap * self.out_h + oy) * self.out_w + ox];
                    if d == 0.0 {
                        continue;
                    }
                    let grads = &mut weight_grads[omap * n..(omap + 1) * n];
                    let mut p = 0;
                    for m in 0..self.in_maps {
                        for ky in 0..self.kernel {
                            for kx in 0..self.kernel {
                                let ii = self.input_index(
                                    m,
                                    oy * self.stride + ky,
                                    ox * self.stride + kx,
                                );
                                grads[p] += d * sx[ii];
                                if need_input_deltas {
                                    input_deltas[ii] += d * sw[p];
                                }
                                p += 1;
                            }
                        }
                    }
                }
            }
        }

        Ok(LayerGradients {
            weight_grads,
            input_deltas,
        })
    }

    pub fn apply_update(&mut self, weight_grads: &[f64], lr: f64, clamp: bool) -> Result<()> {
        if weight_grads.len() != self.weight_count() {
            return Err(Error::LengthMismatch {
                expected: self.weight_count(),
                got: weight_grads.len(),
            });
        }
        self.stale = true;
        for (w, &g) in self.shadow.iter_mut().zip(weight_grads) {
            *w -= lr * g;
            if clamp {
                *w = w.clamp(-1.0, 1.0);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::DenseBinaryLayer;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_conv(
        rng: &mut ChaCha8Rng,
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
    ) -> ConvBinaryLayer {
        let mut l = ConvBinaryLayer::new(in_maps, out_maps, kernel, stride, in_h, in_w).unwrap();
        for w in l.shadow_kernels_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        l.sync_mirror().unwrap();
        l
    }

    #[test]
    fn stride_two_output_sizes() {
        let l = ConvBinaryLayer::new(1, 7, 5, 2, 29, 29).unwrap();
        assert_eq!((l.out_h(), l.out_w()), (13, 13));
        let l = ConvBinaryLayer::new(7, 51, 5, 2, 13, 13).unwrap();
        assert_eq!((l.out_h(), l.out_w()), (5, 5));
    }

    #[test]
    fn rejects_bad_geometry() {
        // (28 - 5) % 2 != 0: no implicit padding.
        assert!(matches!(
            ConvBinaryLayer::new(1, 7, 5, 2, 28, 28),
            Err(Error::Geometry(_))
        ));
        // Even receptive field: 1 * 4 * 4.
        assert!(matches!(
            ConvBinaryLayer::new(1, 3, 4, 2, 8, 8),
            Err(Error::EvenFanIn(16))
        ));
        assert!(ConvBinaryLayer::new(2, 3, 4, 2, 8, 8).is_err());
    }

    #[test]
    fn all_positive_input_and_kernels() {
        let mut l = ConvBinaryLayer::new(1, 3, 3, 2, 9, 9).unwrap();
        for w in l.shadow_kernels_mut() {
            *w = 0.5;
        }
        l.sync_mirror().unwrap();
        let input = PackedBits::from_signs(&vec![Sign::Plus; 81]).unwrap();
        let out = l.forward_binary(&input).unwrap();
        assert_eq!(out.to_signs(), vec![Sign::Plus; l.out_len()]);
        let shadow = l.forward_shadow(&vec![1.0; 81]).unwrap();
        assert_eq!(shadow, vec![1.0; l.out_len()]);
    }

    #[test]
    fn one_by_one_output_reduces_to_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // 5x5 input, 5x5 kernel, stride 1: single output pixel per map.
        let conv = random_conv(&mut rng, 1, 3, 5, 1, 5, 5);
        let mut dense = DenseBinaryLayer::new(25, 3).unwrap();
        dense
            .set_shadow_weights(conv.shadow_kernels().to_vec())
            .unwrap();
        dense.sync_mirror().unwrap();

        let input: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(
            conv.forward_shadow(&input).unwrap(),
            dense.forward_shadow(&input).unwrap()
        );

        let packed = PackedBits::from_reals(&input).unwrap();
        assert_eq!(
            conv.forward_binary(&packed).unwrap().to_signs(),
            dense.forward_binary(&packed).unwrap().to_signs()
        );

        let deltas = [0.3, -0.7, 0.2];
        let slope = SlopeConfig::TwoOverN;
        let cg = conv.backward(&input, &deltas, &slope).unwrap();
        let dg = dense.backward(&input, &deltas, &slope).unwrap();
        assert_eq!(cg.weight_grads, dg.weight_grads);
        assert_eq!(cg.input_deltas, dg.input_deltas);
    }

    #[test]
    fn shadow_and_binary_paths_sign_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let l = random_conv(&mut rng, 1, 4, 5, 2, 9, 9);
            let input: Vec<f64> = (0..81).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shadow = l.forward_shadow(&input).unwrap();
            let binary = l
                .forward_binary(&PackedBits::from_reals(&input).unwrap())
                .unwrap();
            for (j, &v) in shadow.iter().enumerate() {
                assert_eq!(Sign::from_real(v), binary.get(j), "pixel {j}");
            }
        }
    }

    #[test]
    fn backward_zero_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let l = random_conv(&mut rng, 1, 2, 3, 2, 7, 7);
        let input: Vec<f64> = (0..49).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = l
            .backward(&input, &vec![0.0; l.out_len()], &SlopeConfig::TwoOverN)
            .unwrap();
        assert!(g.weight_grads.iter().all(|&v| v == 0.0));
        assert!(g.input_deltas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_per_tap_accumulation() {
        // Independent oracle: walk every output position and tap, applying
        // the two surrogate derivative rules one element at a time.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let l = random_conv(&mut rng, 3, 3, 3, 2, 7, 7);
            let input: Vec<f64> = (0..l.in_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let deltas: Vec<f64> = (0..l.out_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let slope = SlopeConfig::TwoOverN;
            let got = l.backward(&input, &deltas, &slope).unwrap();

            let n = l.field_len();
            let s = slope.value(n);
            let sign = |v: f64| if v >= 0.0 { 1.0 } else { -1.0 };
            let mut wg = vec![0.0; l.weight_count()];
            let mut id = vec![0.0; l.in_len()];
            for omap in 0..l.out_maps() {
                for oy in 0..l.out_h() {
                    for ox in 0..l.out_w() {
                        let d = deltas[(omap * l.out_h() + oy) * l.out_w() + ox];
                        for m in 0..l.in_maps() {
                            for ky in 0..l.kernel() {
                                for kx in 0..l.kernel() {
                                    let ii = (m * l.in_h() + oy * l.stride() + ky) * l.in_w()
                                        + ox * l.stride()
                                        + kx;
                                    let pi = (m * l.kernel() + ky) * l.kernel() + kx;
                                    wg[omap * n + pi] += d * s * sign(input[ii]);
                                    id[ii] += d * s * sign(l.shadow_kernels()[omap * n + pi]);
                                }
                            }
                        }
                    }
                }
            }
            for (a, b) in got.weight_grads.iter().zip(&wg) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in got.input_deltas.iter().zip(&id) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stale_mirror_blocks_binary_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut l = random_conv(&mut rng, 1, 2, 3, 2, 7, 7);
        l.shadow_kernels_mut()[0] = -0.9;
        let input = PackedBits::from_signs(&vec![Sign::Plus; 49]).unwrap();
        assert!(matches!(l.forward_binary(&input), Err(Error::StaleMirror)));
    }
}

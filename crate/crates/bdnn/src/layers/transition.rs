//! Transition layer: real weighted sums pushed through an activation and a
//! threshold, producing binary outputs from real inputs. Used once, directly
//! after the input, when the data is not binary.

use crate::bitpack::PackedBits;
use crate::error::{Error, Result};
use crate::layers::conv::conv_output_size;
use crate::layers::LayerGradients;
use crate::math::{self, TransitionParams};

/// Shape of a transition layer: fully connected or convolutional (the
/// convolutional form fronts image inputs).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransitionGeometry {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Conv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
    },
}

/// A layer of ordinary real weights whose outputs are binarized by
/// `activation(weighted sum) >= threshold`. The real form of each output —
/// `activation(sum) - threshold` — is kept for training, and its sign equals
/// the binary output exactly.
#[derive(Clone, Debug)]
pub struct TransitionLayer {
    geometry: TransitionGeometry,
    weights: Vec<f64>,
    params: TransitionParams,
}

impl TransitionLayer {
    /// Fully connected transition. The fan-out must be odd: these outputs
    /// feed binary layers.
    pub fn new_dense(
        fan_in: usize,
        fan_out: usize,
        params: TransitionParams,
    ) -> Result<TransitionLayer> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Geometry(format!(
                "transition dims must be positive, got {fan_in}x{fan_out}"
            )));
        }
        if fan_out % 2 == 0 {
            return Err(Error::EvenFanIn(fan_out));
        }
        Ok(TransitionLayer {
            geometry: TransitionGeometry::Dense { fan_in, fan_out },
            weights: vec![0.0; fan_in * fan_out],
            params,
        })
    }

    /// Convolutional transition. The total output count must be odd.
    pub fn new_conv(
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
        params: TransitionParams,
    ) -> Result<TransitionLayer> {
        if in_maps == 0 || out_maps == 0 {
            return Err(Error::Geometry("map counts must be positive".into()));
        }
        let out_h = conv_output_size(in_h, kernel, stride)?;
        let out_w = conv_output_size(in_w, kernel, stride)?;
        let out_total = out_maps * out_h * out_w;
        if out_total % 2 == 0 {
            return Err(Error::EvenFanIn(out_total));
        }
        Ok(TransitionLayer {
            geometry: TransitionGeometry::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                in_h,
                in_w,
            },
            weights: vec![0.0; out_maps * in_maps * kernel * kernel],
            params,
        })
    }

    pub fn geometry(&self) -> &TransitionGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &TransitionParams {
        &self.params
    }

    pub fn in_len(&self) -> usize {
        match self.geometry {
            TransitionGeometry::Dense { fan_in, .. } => fan_in,
            TransitionGeometry::Conv {
                in_maps, in_h, in_w, ..
            } => in_maps * in_h * in_w,
        }
    }

    pub fn out_len(&self) -> usize {
        match self.geometry {
            TransitionGeometry::Dense { fan_out, .. } => fan_out,
            TransitionGeometry::Conv {
                out_maps,
                kernel,
                stride,
                in_h,
                in_w,
                ..
            } => {
                let oh = (in_h - kernel) / stride + 1;
                let ow = (in_w - kernel) / stride + 1;
                out_maps * oh * ow
            }
        }
    }

    /// Output units that own a weight row: neurons for the dense form,
    /// output maps for the convolutional form.
    pub fn output_units(&self) -> usize {
        match self.geometry {
            TransitionGeometry::Dense { fan_out, .. } => fan_out,
            TransitionGeometry::Conv { out_maps, .. } => out_maps,
        }
    }

    /// Weights per output unit (fan-in or flattened receptive field).
    pub fn weights_per_output(&self) -> usize {
        match self.geometry {
            TransitionGeometry::Dense { fan_in, .. } => fan_in,
            TransitionGeometry::Conv {
                in_maps, kernel, ..
            } => in_maps * kernel * kernel,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weight_count() {
            return Err(Error::LengthMismatch {
                expected: self.weight_count(),
                got: weights.len(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    /// Forward pass returning both the binary outputs and their real
    /// training form. The binary side is the sign of the real side.
    pub fn forward(&self, input: &[f64]) -> Result<(PackedBits, Vec<f64>)> {
        let shadow = self.forward_shadow(input)?;
        let binary = PackedBits::from_reals(&shadow)?;
        Ok((binary, shadow))
    }

    /// Real form of every output: `activation(weighted sum) - threshold`.
    pub fn forward_shadow(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_len() {
            return Err(Error::LengthMismatch {
                expected: self.in_len(),
                got: input.len(),
            });
        }
        let mut out = Vec::with_capacity(self.out_len());
        match self.geometry {
            TransitionGeometry::Dense { fan_in, fan_out } => {
                for j in 0..fan_out {
                    let row = &self.weights[j * fan_in..(j + 1) * fan_in];
                    out.push(math::transition_shadow(input, row, &self.params)?);
                }
            }
            TransitionGeometry::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                in_h,
                in_w,
            } => {
                let oh = (in_h - kernel) / stride + 1;
                let ow = (in_w - kernel) / stride + 1;
                let field = in_maps * kernel * kernel;
                for omap in 0..out_maps {
                    let row = &self.weights[omap * field..(omap + 1) * field];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut u = 0.0;
                            let mut p = 0;
                            for m in 0..in_maps {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        u += input[(m * in_h + iy) * in_w + ix] * row[p];
                                        p += 1;
                                    }
                                }
                            }
                            out.push(self.params.activation.apply(u) - self.params.threshold);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Ordinary chain rule through the activation (the threshold is a
    /// constant and drops out).
    pub fn backward(&self, input: &[f64], output_deltas: &[f64]) -> Result<LayerGradients> {
        self.backward_impl(input, output_deltas, true)
    }

    pub(crate) fn backward_impl(
        &self,
        input: &[f64],
        output_deltas: &[f64],
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
        let mut weight_grads = vec![0.0; self.weight_count()];
        let mut input_deltas = if need_input_deltas {
            vec![0.0; self.in_len()]
        } else {
            Vec::new()
        };
        match self.geometry {
            TransitionGeometry::Dense { fan_in, fan_out } => {
                for j in 0..fan_out {
                    let d = output_deltas[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &self.weights[j * fan_in..(j + 1) * fan_in];
                    let u: f64 = input.iter().zip(row).map(|(a, b)| a * b).sum();
                    let da = d * self.params.activation.derivative(u);
                    let grads = &mut weight_grads[j * fan_in..(j + 1) * fan_in];
                    for i in 0..fan_in {
                        grads[i] = da * input[i];
                        if need_input_deltas {
                            input_deltas[i] += da * row[i];
                        }
                    }
                }
            }
            TransitionGeometry::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                in_h,
                in_w,
            } => {
                let oh = (in_h - kernel) / stride + 1;
                let ow = (in_w - kernel) / stride + 1;
                let field = in_maps * kernel * kernel;
                for omap in 0..out_maps {
                    let row = &self.weights[omap * field..(omap + 1) * field];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let d = output_deltas[(omap * oh + oy) * ow + ox];
                            if d == 0.0 {
                                continue;
                            }
                            let mut u = 0.0;
                            let mut p = 0;
                            for m in 0..in_maps {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        u += input[(m * in_h + iy) * in_w + ix] * row[p];
                                        p += 1;
                                    }
                                }
                            }
                            let da = d * self.params.activation.derivative(u);
                            p = 0;
                            for m in 0..in_maps {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        let ii = (m * in_h + iy) * in_w + ix;
                                        weight_grads[omap * field + p] += da * input[ii];
                                        if need_input_deltas {
                                            input_deltas[ii] += da * row[p];
                                        }
                                        p += 1;
                                    }
                                }
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

    pub fn apply_update(&mut self, weight_grads: &[f64], lr: f64) -> Result<()> {
        if weight_grads.len() != self.weight_count() {
            return Err(Error::LengthMismatch {
                expected: self.weight_count(),
                got: weight_grads.len(),
            });
        }
        for (w, &g) in self.weights.iter_mut().zip(weight_grads) {
            *w -= lr * g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Sign;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn odd_output_enforced() {
        assert!(matches!(
            TransitionLayer::new_dense(4, 2, TransitionParams::default()),
            Err(Error::EvenFanIn(2))
        ));
        assert!(TransitionLayer::new_dense(4, 3, TransitionParams::default()).is_ok());
        // 2 maps of 3x3 = 18 outputs: even, rejected.
        assert!(matches!(
            TransitionLayer::new_conv(1, 2, 3, 2, 7, 7, TransitionParams::default()),
            Err(Error::EvenFanIn(18))
        ));
        assert!(TransitionLayer::new_conv(1, 3, 3, 2, 7, 7, TransitionParams::default()).is_ok());
    }

    #[test]
    fn forward_values_and_zero_weights() {
        let mut l = TransitionLayer::new_dense(2, 1, TransitionParams::default()).unwrap();
        l.set_weights(vec![1.0, 1.0]).unwrap();
        let (bin, shadow) = l.forward(&[0.5, 0.3]).unwrap();
        assert!((shadow[0] - 0.8f64.tanh()).abs() < 1e-15);
        assert_eq!(bin.get(0), Sign::Plus);

        let l = TransitionLayer::new_dense(2, 1, TransitionParams::default()).unwrap();
        let (bin, shadow) = l.forward(&[0.5, 0.3]).unwrap();
        assert_eq!(shadow[0], 0.0);
        assert_eq!(bin.get(0), Sign::Plus); // sign(0) is +1
    }

    #[test]
    fn binary_is_sign_of_shadow() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let fan_in = rng.random_range(1..10usize);
            let fan_out = 2 * rng.random_range(0..4usize) + 1;
            let mut l = TransitionLayer::new_dense(fan_in, fan_out, TransitionParams::default())
                .unwrap();
            for w in l.weights_mut() {
                *w = rng.random_range(-1.0..1.0);
            }
            let input: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (bin, shadow) = l.forward(&input).unwrap();
            for (j, &v) in shadow.iter().enumerate() {
                assert_eq!(bin.get(j), Sign::from_real(v));
            }
        }
    }

    #[test]
    fn conv_geometry_output() {
        // 33x33 input, 9x9 kernel, stride 2: 13x13 maps.
        let l =
            TransitionLayer::new_conv(1, 17, 9, 2, 33, 33, TransitionParams::default()).unwrap();
        assert_eq!(l.out_len(), 17 * 13 * 13);
        assert_eq!(l.in_len(), 33 * 33);
        assert_eq!(l.weights_per_output(), 81);
    }

    #[test]
    fn backward_zero_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut l = TransitionLayer::new_dense(4, 3, TransitionParams::default()).unwrap();
        for w in l.weights_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let g = l.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.weight_grads.iter().all(|&v| v == 0.0));
        assert!(g.input_deltas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let step = 1e-5;
        for _ in 0..30 {
            let fan_in = rng.random_range(1..6usize);
            let mut l =
                TransitionLayer::new_dense(fan_in, 1, TransitionParams::default()).unwrap();
            for w in l.weights_mut() {
                *w = rng.random_range(-1.0..1.0);
            }
            let input: Vec<f64> = (0..fan_in).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = l.backward(&input, &[1.0]).unwrap();
            for k in 0..fan_in {
                let mut lp = l.clone();
                lp.weights_mut()[k] += step;
                let mut lm = l.clone();
                lm.weights_mut()[k] -= step;
                let fd = (lp.forward_shadow(&input).unwrap()[0]
                    - lm.forward_shadow(&input).unwrap()[0])
                    / (2.0 * step);
                let denom = g.weight_grads[k].abs().max(1e-3);
                assert!((g.weight_grads[k] - fd).abs() / denom < 1e-6);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut l =
            TransitionLayer::new_conv(1, 3, 3, 2, 7, 7, TransitionParams::default()).unwrap();
        for w in l.weights_mut() {
            *w = rng.random_range(-0.5..0.5);
        }
        let input: Vec<f64> = (0..49).map(|_| rng.random_range(-1.0..1.0)).collect();
        let deltas: Vec<f64> = (0..l.out_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = l.backward(&input, &deltas).unwrap();
        let step = 1e-6;
        let loss = |layer: &TransitionLayer| -> f64 {
            layer
                .forward_shadow(&input)
                .unwrap()
                .iter()
                .zip(&deltas)
                .map(|(o, d)| o * d)
                .sum()
        };
        for k in 0..l.weight_count() {
            let mut lp = l.clone();
            lp.weights_mut()[k] += step;
            let mut lm = l.clone();
            lm.weights_mut()[k] -= step;
            let fd = (loss(&lp) - loss(&lm)) / (2.0 * step);
            let denom = g.weight_grads[k].abs().max(1e-2);
            assert!(
                (g.weight_grads[k] - fd).abs() / denom < 1e-4,
                "weight {k}: {} vs {}",
                g.weight_grads[k],
                fd
            );
        }
    }

    #[test]
    fn threshold_does_not_change_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut a = TransitionLayer::new_dense(3, 1, TransitionParams::default()).unwrap();
        for w in a.weights_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let mut b = a.clone();
        b.params.threshold = 0.4;
        let input = [0.2, -0.6, 0.9];
        let ga = a.backward(&input, &[0.8]).unwrap();
        let gb = b.backward(&input, &[0.8]).unwrap();
        assert_eq!(ga.weight_grads, gb.weight_grads);
        assert_eq!(ga.input_deltas, gb.input_deltas);
    }
}

//! Fully connected binary layer.

use crate::bitpack::PackedBits;
use crate::error::{Error, Result};
use crate::layers::LayerGradients;
use crate::math::{Sign, SlopeConfig};

/// A fully connected layer with binary weights.
///
/// `shadow` is the row-major fan_out × fan_in matrix of real training
/// weights; `packed` mirrors its signs one row per output neuron. The fan-in
/// must be odd so the shadow activation can never be zero.
#[derive(Clone, Debug)]
pub struct DenseBinaryLayer {
    fan_in: usize,
    fan_out: usize,
    shadow: Vec<f64>,
    packed: Vec<PackedBits>,
    stale: bool,
}

impl DenseBinaryLayer {
    /// Creates a layer with all shadow weights zero (mirror all +1, synced).
    pub fn new(fan_in: usize, fan_out: usize) -> Result<DenseBinaryLayer> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Geometry(format!(
                "dense layer dims must be positive, got {fan_in}x{fan_out}"
            )));
        }
        if fan_in % 2 == 0 {
            return Err(Error::EvenFanIn(fan_in));
        }
        let mut layer = DenseBinaryLayer {
            fan_in,
            fan_out,
            shadow: vec![0.0; fan_in * fan_out],
            packed: Vec::new(),
            stale: true,
        };
        layer.sync_mirror()?;
        Ok(layer)
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    #[inline]
    pub fn weight_count(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn shadow_weights(&self) -> &[f64] {
        &self.shadow
    }

    /// Mutable shadow weights; marks the mirror stale.
    pub fn shadow_weights_mut(&mut self) -> &mut [f64] {
        self.stale = true;
        &mut self.shadow
    }

    pub(crate) fn set_shadow_weights(&mut self, weights: Vec<f64>) -> Result<()> {
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

    /// Rebuilds the packed mirror as the sign of every shadow weight.
    pub fn sync_mirror(&mut self) -> Result<()> {
        if self.shadow.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shadow weight"));
        }
        let n = self.fan_in;
        self.packed = (0..self.fan_out)
            .map(|j| PackedBits::from_reals(&self.shadow[j * n..(j + 1) * n]))
            .collect::<Result<_>>()?;
        self.stale = false;
        Ok(())
    }

    /// Packed weight rows; errors while the mirror is stale.
    pub fn packed_rows(&self) -> Result<&[PackedBits]> {
        if self.stale {
            return Err(Error::StaleMirror);
        }
        Ok(&self.packed)
    }

    /// Binary forward pass: one agreement count per output neuron.
    pub fn forward_binary(&self, input: &PackedBits) -> Result<PackedBits> {
        let margins = self.forward_margins(input)?;
        let signs: Vec<Sign> = margins
            .iter()
            .map(|&m| if m >= 0 { Sign::Plus } else { Sign::Minus })
            .collect();
        PackedBits::from_signs(&signs)
    }

    /// Integer margins `2*agreements - n`, one per output neuron. The sign
    /// of each margin is the neuron's binary output.
    pub fn forward_margins(&self, input: &PackedBits) -> Result<Vec<i64>> {
        if self.stale {
            return Err(Error::StaleMirror);
        }
        if input.len() != self.fan_in {
            return Err(Error::LengthMismatch {
                expected: self.fan_in,
                got: input.len(),
            });
        }
        self.packed.iter().map(|row| input.margin(row)).collect()
    }

    /// Shadow forward pass: per-neuron mean of the product signs against the
    /// real shadow weights. Sign-consistent with [`Self::forward_binary`]
    /// whenever the mirror is synced and the binary input is the sign of
    /// this input.
    pub fn forward_shadow(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.fan_in {
            return Err(Error::LengthMismatch {
                expected: self.fan_in,
                got: input.len(),
            });
        }
        let n = self.fan_in;
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
        let mut out = Vec::with_capacity(self.fan_out);
        for j in 0..self.fan_out {
            let row = &self.shadow[j * n..(j + 1) * n];
            let mut acc: i64 = 0;
            for i in 0..n {
                let sw = if row[i] >= 0.0 { 1 } else { -1 };
                acc += sw * sx[i];
            }
            // Integer sum in [-n, n], exact; the division keeps its sign.
            out.push(acc as f64 / n as f64);
        }
        Ok(out)
    }

    /// Surrogate backward pass. Weight gradients are the output deltas times
    /// the signed slope of the corresponding input; input deltas accumulate
    /// the signed slope of each weight.
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
        if input.len() != self.fan_in {
            return Err(Error::LengthMismatch {
                expected: self.fan_in,
                got: input.len(),
            });
        }
        if output_deltas.len() != self.fan_out {
            return Err(Error::LengthMismatch {
                expected: self.fan_out,
                got: output_deltas.len(),
            });
        }
        let n = self.fan_in;
        let s = slope.value(n);
        // Signed slope per input element: s * sign(x_i).
        let sx: Vec<f64> = input
            .iter()
            .map(|&v| if v >= 0.0 { s } else { -s })
            .collect();

        let mut weight_grads = vec![0.0; self.weight_count()];
        for (j, &d) in output_deltas.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &mut weight_grads[j * n..(j + 1) * n];
            for i in 0..n {
                row[i] = d * sx[i];
            }
        }

        let mut input_deltas = Vec::new();
        if need_input_deltas {
            input_deltas = vec![0.0; n];
            for (j, &d) in output_deltas.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.shadow[j * n..(j + 1) * n];
                for i in 0..n {
                    let g = if row[i] >= 0.0 { s } else { -s };
                    input_deltas[i] += d * g;
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

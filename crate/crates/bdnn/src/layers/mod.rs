//! Layer-level forward and backward computation.
//!
//! Binary layers (dense and strided convolution) hold real-valued shadow
//! weights plus a bit-packed mirror of their signs. The packed mirror is
//! what binary inference runs on; any mutation of the shadow weights marks
//! it stale, and running binary inference on a stale mirror is an error.
//! The transition layer holds ordinary real weights and converts real
//! activations to binary ones.

mod conv;
mod dense;
mod transition;

pub use conv::ConvBinaryLayer;
pub use dense::DenseBinaryLayer;
pub use transition::{TransitionGeometry, TransitionLayer};

use crate::error::Result;
use crate::math::SlopeConfig;

/// Gradients produced by a layer's backward pass.
///
/// `weight_grads` matches the layer's weight storage; `input_deltas` matches
/// the layer input. Internal callers may skip input deltas for the first
/// layer of a network, in which case the field is left empty.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub weight_grads: Vec<f64>,
    pub input_deltas: Vec<f64>,
}

/// A network layer.
#[derive(Clone, Debug)]
pub enum Layer {
    Dense(DenseBinaryLayer),
    Conv(ConvBinaryLayer),
    Transition(TransitionLayer),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::Transition(t) => match t.geometry() {
                TransitionGeometry::Dense { .. } => "transition_dense",
                TransitionGeometry::Conv { .. } => "transition_conv",
            },
        }
    }

    /// True for layers whose weights are binary at inference time.
    pub fn is_binary(&self) -> bool {
        !matches!(self, Layer::Transition(_))
    }

    pub fn in_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.fan_in(),
            Layer::Conv(c) => c.in_len(),
            Layer::Transition(t) => t.in_len(),
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            Layer::Dense(d) => d.fan_out(),
            Layer::Conv(c) => c.out_len(),
            Layer::Transition(t) => t.out_len(),
        }
    }

    pub fn weight_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight_count(),
            Layer::Conv(c) => c.weight_count(),
            Layer::Transition(t) => t.weight_count(),
        }
    }

    /// Shadow weights for binary layers, real weights for transition layers.
    pub fn weights(&self) -> &[f64] {
        match self {
            Layer::Dense(d) => d.shadow_weights(),
            Layer::Conv(c) => c.shadow_kernels(),
            Layer::Transition(t) => t.weights(),
        }
    }

    /// Mutable weight access. Marks the packed mirror of binary layers stale.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Dense(d) => d.shadow_weights_mut(),
            Layer::Conv(c) => c.shadow_kernels_mut(),
            Layer::Transition(t) => t.weights_mut(),
        }
    }

    pub fn is_synced(&self) -> bool {
        match self {
            Layer::Dense(d) => d.is_synced(),
            Layer::Conv(c) => c.is_synced(),
            Layer::Transition(_) => true,
        }
    }

    /// Replaces the full weight vector (binary layers are left stale).
    pub(crate) fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        match self {
            Layer::Dense(d) => d.set_shadow_weights(weights),
            Layer::Conv(c) => c.set_shadow_kernels(weights),
            Layer::Transition(t) => t.set_weights(weights),
        }
    }

    /// Rebuilds the packed mirror from the shadow weights. No-op for
    /// transition layers.
    pub fn sync_mirror(&mut self) -> Result<()> {
        match self {
            Layer::Dense(d) => d.sync_mirror(),
            Layer::Conv(c) => c.sync_mirror(),
            Layer::Transition(_) => Ok(()),
        }
    }

    /// Gradient-descent update `w -= lr * grad`. Binary layers clamp their
    /// shadow weights to [−1, 1] when asked; transition weights are ordinary
    /// real weights and are never clamped.
    pub fn apply_update(&mut self, weight_grads: &[f64], lr: f64, clamp: bool) -> Result<()> {
        match self {
            Layer::Dense(d) => d.apply_update(weight_grads, lr, clamp),
            Layer::Conv(c) => c.apply_update(weight_grads, lr, clamp),
            Layer::Transition(t) => t.apply_update(weight_grads, lr),
        }
    }

    pub(crate) fn backward_impl(
        &self,
        input: &[f64],
        output_deltas: &[f64],
        slope: &SlopeConfig,
        need_input_deltas: bool,
    ) -> Result<LayerGradients> {
        match self {
            Layer::Dense(d) => d.backward_impl(input, output_deltas, slope, need_input_deltas),
            Layer::Conv(c) => c.backward_impl(input, output_deltas, slope, need_input_deltas),
            Layer::Transition(t) => t.backward_impl(input, output_deltas, need_input_deltas),
        }
    }
}

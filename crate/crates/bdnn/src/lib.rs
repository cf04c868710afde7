//! A binarized neural network engine.
//!
//! Every neuron and weight at inference time is −1 or +1; a neuron fires on
//! the majority sign of its elementwise input·weight products. That makes
//! the whole forward pass Boolean: values pack one bit per element into
//! 64-bit words ([`bitpack::PackedBits`]), and each neuron costs a handful
//! of XNOR + popcount word operations instead of a real dot product.
//!
//! Training works on real-valued "shadow" weights whose signs determine the
//! binary network exactly, so every shadow forward pass agrees with the
//! packed pass neuron for neuron. Gradients come from a straight-line
//! surrogate of the discontinuous activation (slope ±2/n by default), and
//! output errors are gated by sign: an output that already matches its
//! target contributes nothing. Networks with real inputs get a single
//! transition layer (ordinary weighted sum, tanh, threshold) in front of
//! the binary stack.
//!
//! - [`bitpack`] — packed vectors and agreement counting
//! - [`math`] — the scalar rules: signs, shadows, surrogate gradients
//! - [`layers`] — dense, strided-conv and transition layers
//! - [`network`] — layer stacks, canned structures A–E, inference
//! - [`training`] — SGD loop, evaluation, metrics
//! - [`data`] — MNIST/CIFAR-10 parsing and sample preparation
//! - [`checkpoint`] — the 1-bit-capable model file format
//! - [`reference`] — naive sign-array evaluator, the permanent oracle for
//!   the packed kernels
//!
//! The `parallel` feature (default on) shards dataset evaluation and
//! minibatch gradients across threads with rayon; results are identical to
//! the sequential build.

pub mod bitpack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layers;
pub mod math;
pub mod network;
pub mod reference;
pub mod training;

pub use bitpack::{sign_from_agreements, PackedBits};
pub use error::{Error, Result};
pub use math::{Activation, Sign, SlopeConfig, TransitionParams};
pub use network::{
    argmax_margin, ForwardTrace, InputGeometry, LayerSpec, NetInput, Network, NetworkSpec,
    Prediction, StructureId,
};
pub use training::{
    evaluate, evaluate_sequential, init_weights, sgd_minibatch, sgd_step, train, write_metrics_csv,
    Metrics, Sample, TrainConfig,
};

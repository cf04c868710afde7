//! Naive sign-array evaluator.
//!
//! This is the permanent independent oracle for the packed kernels: it works
//! on plain `Sign` slices with per-element loops and never touches the
//! bit-packed representation. Tests compare the packed path against it, and
//! the benchmark command reports the throughput of both.

use crate::layers::{Layer, TransitionGeometry};
use crate::math::{Sign, TransitionParams};
use crate::network::Network;

/// Number of positions where the two sign sequences hold the same value,
/// counted one element at a time.
pub fn count_agreements(a: &[Sign], b: &[Sign]) -> usize {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).filter(|(x, w)| x == w).count()
}

/// Per-neuron rule computed naively: majority sign of the elementwise
/// products, ties to +1.
pub fn majority_sign(x: &[Sign], w: &[Sign]) -> Sign {
    assert_eq!(x.len(), w.len(), "length mismatch");
    let agree = count_agreements(x, w) as i64;
    let n = x.len() as i64;
    if 2 * agree - n >= 0 {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

enum NaiveLayer {
    Dense {
        rows: Vec<Vec<Sign>>,
    },
    Conv {
        in_maps: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
        kernels: Vec<Vec<Sign>>,
    },
    Transition {
        geometry: TransitionGeometry,
        rows: Vec<Vec<f64>>,
        params: TransitionParams,
    },
}

/// Unpacked mirror of a [`Network`] evaluated with element-at-a-time loops.
///
/// Weights are taken as the signs of the network's shadow weights, so the
/// construction does not depend on the packed mirror either.
pub struct SignNetwork {
    layers: Vec<NaiveLayer>,
}

impl SignNetwork {
    pub fn from_network(net: &Network) -> SignNetwork {
        let layers = net
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Dense(d) => {
                    let n = d.fan_in();
                    let rows = (0..d.fan_out())
                        .map(|j| {
                            d.shadow_weights()[j * n..(j + 1) * n]
                                .iter()
                                .map(|&v| Sign::from_real(v))
                                .collect()
                        })
                        .collect();
                    NaiveLayer::Dense { rows }
                }
                Layer::Conv(c) => {
                    let n = c.field_len();
                    let kernels = (0..c.out_maps())
                        .map(|j| {
                            c.shadow_kernels()[j * n..(j + 1) * n]
                                .iter()
                                .map(|&v| Sign::from_real(v))
                                .collect()
                        })
                        .collect();
                    NaiveLayer::Conv {
                        in_maps: c.in_maps(),
                        kernel: c.kernel(),
                        stride: c.stride(),
                        in_h: c.in_h(),
                        in_w: c.in_w(),
                        kernels,
                    }
                }
                Layer::Transition(t) => {
                    let n = t.weights_per_output();
                    let rows = (0..t.output_units())
                        .map(|j| t.weights()[j * n..(j + 1) * n].to_vec())
                        .collect();
                    NaiveLayer::Transition {
                        geometry: t.geometry().clone(),
                        rows,
                        params: *t.params(),
                    }
                }
            })
            .collect();
        SignNetwork { layers }
    }

    /// Naive classification of a binary input: predicted class and the
    /// per-class integer margins of the output layer.
    pub fn infer_binary(&self, input: &[Sign]) -> (usize, Vec<i64>) {
        let mut cur = input.to_vec();
        self.run(&mut cur, None)
    }

    /// Naive classification of a real input through a leading transition layer.
    pub fn infer_real(&self, input: &[f64]) -> (usize, Vec<i64>) {
        let first = match &self.layers[0] {
            NaiveLayer::Transition { geometry, rows, params } => {
                transition_signs(geometry, rows, params, input)
            }
            _ => panic!("real input requires a leading transition layer"),
        };
        let mut cur = first;
        self.run(&mut cur, Some(1))
    }

    fn run(&self, cur: &mut Vec<Sign>, skip: Option<usize>) -> (usize, Vec<i64>) {
        let start = skip.unwrap_or(0);
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate().skip(start) {
            match layer {
                NaiveLayer::Dense { rows } => {
                    if idx == last {
                        let margins: Vec<i64> = rows
                            .iter()
                            .map(|row| {
                                let agree = count_agreements(cur, row) as i64;
                                2 * agree - row.len() as i64
                            })
                            .collect();
                        return (argmax_lowest(&margins), margins);
                    }
                    *cur = rows.iter().map(|row| majority_sign(cur, row)).collect();
                }
                NaiveLayer::Conv {
                    in_maps,
                    kernel,
                    stride,
                    in_h,
                    in_w,
                    kernels,
                } => {
                    let out_h = (in_h - kernel) / stride + 1;
                    let out_w = (in_w - kernel) / stride + 1;
                    let mut out = Vec::with_capacity(kernels.len() * out_h * out_w);
                    let mut patch = vec![Sign::Minus; in_maps * kernel * kernel];
                    for k in kernels {
                        for oy in 0..out_h {
                            for ox in 0..out_w {
                                gather_patch(
                                    cur, &mut patch, *in_maps, *kernel, *stride, *in_h, *in_w,
                                    oy, ox,
                                );
                                out.push(majority_sign(&patch, k));
                            }
                        }
                    }
                    *cur = out;
                }
                NaiveLayer::Transition { .. } => {
                    panic!("transition layer only supported at position 0")
                }
            }
        }
        unreachable!("network must end with a dense layer")
    }
}

fn gather_patch(
    input: &[Sign],
    patch: &mut [Sign],
    in_maps: usize,
    kernel: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    oy: usize,
    ox: usize,
) {
    for m in 0..in_maps {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let iy = oy * stride + ky;
                let ix = ox * stride + kx;
                patch[(m * kernel + ky) * kernel + kx] = input[(m * in_h + iy) * in_w + ix];
            }
        }
    }
}

fn transition_signs(
    geometry: &TransitionGeometry,
    rows: &[Vec<f64>],
    params: &TransitionParams,
    input: &[f64],
) -> Vec<Sign> {
    let threshold_sign = |u: f64| {
        if params.activation.apply(u) >= params.threshold {
            Sign::Plus
        } else {
            Sign::Minus
        }
    };
    match geometry {
        TransitionGeometry::Dense { .. } => rows
            .iter()
            .map(|row| {
                let u: f64 = input.iter().zip(row).map(|(a, b)| a * b).sum();
                threshold_sign(u)
            })
            .collect(),
        TransitionGeometry::Conv {
            in_maps,
            kernel,
            stride,
            in_h,
            in_w,
            ..
        } => {
            let out_h = (in_h - kernel) / stride + 1;
            let out_w = (in_w - kernel) / stride + 1;
            let mut out = Vec::with_capacity(rows.len() * out_h * out_w);
            for row in rows {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut u = 0.0;
                        for m in 0..*in_maps {
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let iy = oy * stride + ky;
                                    let ix = ox * stride + kx;
                                    u += input[(m * in_h + iy) * in_w + ix]
                                        * row[(m * kernel + ky) * kernel + kx];
                                }
                            }
                        }
                        out.push(threshold_sign(u));
                    }
                }
            }
            out
        }
    }
}

fn argmax_lowest(margins: &[i64]) -> usize {
    let mut best = 0;
    for (i, &m) in margins.iter().enumerate() {
        if m > margins[best] {
            best = i;
        }
    }
    best
}

//! Networks: ordered layer stacks, canned builders for the benchmark
//! structures, bit-packed inference and the shadow forward/backward passes.

use std::str::FromStr;

use crate::bitpack::PackedBits;
use crate::error::{Error, Result};
use crate::layers::{
    ConvBinaryLayer, DenseBinaryLayer, Layer, LayerGradients, TransitionLayer,
};
use crate::math::{self, Sign, SlopeConfig, TransitionParams};

/// Shape of the network input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputGeometry {
    Flat(usize),
    Image { maps: usize, h: usize, w: usize },
}

impl InputGeometry {
    pub fn len(&self) -> usize {
        match *self {
            InputGeometry::Flat(n) => n,
            InputGeometry::Image { maps, h, w } => maps * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Declarative layer description. Spatial dimensions of convolutional
/// layers are derived from the shape of the preceding layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
    },
    TransitionDense {
        inputs: usize,
        outputs: usize,
        params: TransitionParams,
    },
    TransitionConv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        params: TransitionParams,
    },
}

/// Full network description: input geometry, class count and layer stack.
///
/// A hybrid network has exactly one transition layer, placed first; a
/// pure-binary network has none. The final layer is always dense with one
/// output per class.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input: InputGeometry,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// The five canned structures: A/B are three-layer dense nets for 28x28
/// binary images (784 pixels plus one constant +1 input), C/D are binary
/// convolutional nets over 29x29 inputs, E is the hybrid convolutional net
/// over 33x33 real inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureId {
    A,
    B,
    C,
    D,
    E,
}

impl FromStr for StructureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<StructureId> {
        match s {
            "A" | "a" => Ok(StructureId::A),
            "B" | "b" => Ok(StructureId::B),
            "C" | "c" => Ok(StructureId::C),
            "D" | "d" => Ok(StructureId::D),
            "E" | "e" => Ok(StructureId::E),
            _ => Err(Error::Config(format!("unknown structure {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Shape {
    Flat(usize),
    Image { maps: usize, h: usize, w: usize },
}

impl Shape {
    fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image { maps, h, w } => maps * h * w,
        }
    }
}

impl NetworkSpec {
    pub fn structure(id: StructureId) -> NetworkSpec {
        match id {
            StructureId::A => NetworkSpec {
                input: InputGeometry::Flat(785),
                classes: 10,
                layers: vec![
                    LayerSpec::Dense { inputs: 785, outputs: 1571 },
                    LayerSpec::Dense { inputs: 1571, outputs: 10 },
                ],
            },
            StructureId::B => NetworkSpec {
                input: InputGeometry::Flat(785),
                classes: 10,
                layers: vec![
                    LayerSpec::Dense { inputs: 785, outputs: 2355 },
                    LayerSpec::Dense { inputs: 2355, outputs: 10 },
                ],
            },
            StructureId::C => NetworkSpec {
                input: InputGeometry::Image { maps: 1, h: 29, w: 29 },
                classes: 10,
                layers: vec![
                    LayerSpec::Conv { in_maps: 1, out_maps: 7, kernel: 5, stride: 2 },
                    LayerSpec::Conv { in_maps: 7, out_maps: 51, kernel: 5, stride: 2 },
                    LayerSpec::Dense { inputs: 51 * 5 * 5, outputs: 201 },
                    LayerSpec::Dense { inputs: 201, outputs: 10 },
                ],
            },
            StructureId::D => NetworkSpec {
                input: InputGeometry::Image { maps: 1, h: 29, w: 29 },
                classes: 10,
                layers: vec![
                    LayerSpec::Conv { in_maps: 1, out_maps: 17, kernel: 5, stride: 2 },
                    LayerSpec::Conv { in_maps: 17, out_maps: 71, kernel: 5, stride: 2 },
                    LayerSpec::Dense { inputs: 71 * 5 * 5, outputs: 201 },
                    LayerSpec::Dense { inputs: 201, outputs: 10 },
                ],
            },
            // Hybrid: a convolutional transition front (real input and real
            // first kernels), then a binary stack. The transition maps are
            // 13x13 so the next 5x5 stride-2 stage lands on 5x5 maps.
            StructureId::E => NetworkSpec {
                input: InputGeometry::Image { maps: 1, h: 33, w: 33 },
                classes: 10,
                layers: vec![
                    LayerSpec::TransitionConv {
                        in_maps: 1,
                        out_maps: 17,
                        kernel: 9,
                        stride: 2,
                        params: TransitionParams::default(),
                    },
                    LayerSpec::Conv { in_maps: 17, out_maps: 71, kernel: 5, stride: 2 },
                    LayerSpec::Dense { inputs: 71 * 5 * 5, outputs: 201 },
                    LayerSpec::Dense { inputs: 201, outputs: 10 },
                ],
            },
        }
    }

    pub fn is_hybrid(&self) -> bool {
        matches!(
            self.layers.first(),
            Some(LayerSpec::TransitionDense { .. }) | Some(LayerSpec::TransitionConv { .. })
        )
    }

    /// Checks that adjacent layer shapes compose, binary fan-ins are odd,
    /// at most one transition layer exists and sits first, and the stack
    /// ends with a dense layer matching the class count.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Geometry("network has no layers".into()));
        }
        if self.classes == 0 {
            return Err(Error::Geometry("class count must be positive".into()));
        }
        let mut shape = match self.input {
            InputGeometry::Flat(n) if n > 0 => Shape::Flat(n),
            InputGeometry::Image { maps, h, w } if maps > 0 && h > 0 && w > 0 => {
                Shape::Image { maps, h, w }
            }
            _ => return Err(Error::Geometry("input geometry must be non-empty".into())),
        };
        for (idx, spec) in self.layers.iter().enumerate() {
            let fail = |rule: &str| {
                Err(Error::Geometry(format!("layer {idx}: {rule}")))
            };
            match spec {
                LayerSpec::Dense { inputs, outputs } => {
                    if *inputs != shape.len() {
                        return fail(&format!(
                            "dense expects {} inputs but the previous shape has {}",
                            inputs,
                            shape.len()
                        ));
                    }
                    if inputs % 2 == 0 {
                        return fail(&format!("even fan-in {inputs}"));
                    }
                    if *outputs == 0 {
                        return fail("zero outputs");
                    }
                    shape = Shape::Flat(*outputs);
                }
                LayerSpec::Conv { in_maps, out_maps, kernel, stride } => {
                    let (maps, h, w) = match shape {
                        Shape::Image { maps, h, w } => (maps, h, w),
                        Shape::Flat(_) => {
                            return fail("convolution requires an image-shaped input")
                        }
                    };
                    if *in_maps != maps {
                        return fail(&format!("expects {in_maps} input maps, found {maps}"));
                    }
                    let field = in_maps * kernel * kernel;
                    if field % 2 == 0 {
                        return fail(&format!("even receptive field {field}"));
                    }
                    let oh = crate::layers::ConvBinaryLayer::new(
                        *in_maps, *out_maps, *kernel, *stride, h, w,
                    )
                    .map(|l| (l.out_h(), l.out_w()));
                    let (oh, ow) = match oh {
                        Ok(v) => v,
                        Err(e) => return fail(&e.to_string()),
                    };
                    shape = Shape::Image { maps: *out_maps, h: oh, w: ow };
                }
                LayerSpec::TransitionDense { inputs, outputs, .. } => {
                    if idx != 0 {
                        return fail("transition layer must be the first layer");
                    }
                    if *inputs != shape.len() {
                        return fail(&format!(
                            "transition expects {} inputs but the input has {}",
                            inputs,
                            shape.len()
                        ));
                    }
                    if outputs % 2 == 0 {
                        return fail(&format!("even transition output count {outputs}"));
                    }
                    shape = Shape::Flat(*outputs);
                }
                LayerSpec::TransitionConv { in_maps, out_maps, kernel, stride, params } => {
                    if idx != 0 {
                        return fail("transition layer must be the first layer");
                    }
                    let (maps, h, w) = match shape {
                        Shape::Image { maps, h, w } => (maps, h, w),
                        Shape::Flat(_) => {
                            return fail("convolutional transition requires an image input")
                        }
                    };
                    if *in_maps != maps {
                        return fail(&format!("expects {in_maps} input maps, found {maps}"));
                    }
                    let layer = TransitionLayer::new_conv(
                        *in_maps, *out_maps, *kernel, *stride, h, w, *params,
                    );
                    if let Err(e) = layer {
                        return fail(&e.to_string());
                    }
                    let oh = (h - kernel) / stride + 1;
                    let ow = (w - kernel) / stride + 1;
                    shape = Shape::Image { maps: *out_maps, h: oh, w: ow };
                }
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { outputs, .. }) => {
                if *outputs != self.classes {
                    return Err(Error::Geometry(format!(
                        "final layer has {} outputs but the network declares {} classes",
                        outputs, self.classes
                    )));
                }
            }
            _ => {
                return Err(Error::Geometry(
                    "final layer must be dense (one output per class)".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Network input: a packed binary vector for pure-binary networks, a real
/// vector for hybrid ones.
#[derive(Clone, Debug)]
pub enum NetInput {
    Binary(PackedBits),
    Real(Vec<f64>),
}

impl NetInput {
    pub fn len(&self) -> usize {
        match self {
            NetInput::Binary(p) => p.len(),
            NetInput::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real view of the input as fed to the shadow pass (±1 for binary).
    pub fn to_reals(&self) -> Vec<f64> {
        match self {
            NetInput::Binary(p) => (0..p.len()).map(|i| p.get(i).to_f64()).collect(),
            NetInput::Real(v) => v.clone(),
        }
    }
}

/// Classification result: argmax class and the raw per-class integer
/// margins of the output layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub class: usize,
    pub margins: Vec<i64>,
}

/// Index of the largest margin; ties go to the lowest class index.
pub fn argmax_margin(margins: &[i64]) -> usize {
    let mut best = 0;
    for (i, &m) in margins.iter().enumerate() {
        if m > margins[best] {
            best = i;
        }
    }
    best
}

/// Shadow activations of every layer, retained for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Real view of the network input.
    pub input: Vec<f64>,
    /// One activation vector per layer, in layer order.
    pub outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn final_outputs(&self) -> &[f64] {
        self.outputs.last().expect("trace has at least one layer")
    }
}

/// An instantiated layer stack.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a zero-weight network from a validated spec.
    pub fn build(spec: &NetworkSpec) -> Result<Network> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut shape = match spec.input {
            InputGeometry::Flat(n) => Shape::Flat(n),
            InputGeometry::Image { maps, h, w } => Shape::Image { maps, h, w },
        };
        for layer_spec in &spec.layers {
            let layer = match layer_spec {
                LayerSpec::Dense { inputs, outputs } => {
                    shape = Shape::Flat(*outputs);
                    Layer::Dense(DenseBinaryLayer::new(*inputs, *outputs)?)
                }
                LayerSpec::Conv { in_maps, out_maps, kernel, stride } => {
                    let (h, w) = match shape {
                        Shape::Image { h, w, .. } => (h, w),
                        Shape::Flat(_) => unreachable!("validated"),
                    };
                    let conv = ConvBinaryLayer::new(*in_maps, *out_maps, *kernel, *stride, h, w)?;
                    shape = Shape::Image {
                        maps: *out_maps,
                        h: conv.out_h(),
                        w: conv.out_w(),
                    };
                    Layer::Conv(conv)
                }
                LayerSpec::TransitionDense { inputs, outputs, params } => {
                    shape = Shape::Flat(*outputs);
                    Layer::Transition(TransitionLayer::new_dense(*inputs, *outputs, *params)?)
                }
                LayerSpec::TransitionConv { in_maps, out_maps, kernel, stride, params } => {
                    let (h, w) = match shape {
                        Shape::Image { h, w, .. } => (h, w),
                        Shape::Flat(_) => unreachable!("validated"),
                    };
                    let t = TransitionLayer::new_conv(
                        *in_maps, *out_maps, *kernel, *stride, h, w, *params,
                    )?;
                    let oh = (h - kernel) / stride + 1;
                    let ow = (w - kernel) / stride + 1;
                    shape = Shape::Image { maps: *out_maps, h: oh, w: ow };
                    Layer::Transition(t)
                }
            };
            layers.push(layer);
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    /// Builds one of the canned structures.
    pub fn structure(id: StructureId) -> Network {
        Network::build(&NetworkSpec::structure(id)).expect("canned structures are valid")
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_geometry(&self) -> &InputGeometry {
        &self.spec.input
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn is_hybrid(&self) -> bool {
        self.spec.is_hybrid()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight_count()).sum()
    }

    /// Weights held as binary values at inference time (excludes the
    /// transition layer's real weights).
    pub fn binary_weight_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.is_binary())
            .map(|l| l.weight_count())
            .sum()
    }

    pub fn is_synced(&self) -> bool {
        self.layers.iter().all(|l| l.is_synced())
    }

    pub fn sync_mirrors(&mut self) -> Result<()> {
        for layer in &mut self.layers {
            layer.sync_mirror()?;
        }
        Ok(())
    }

    fn check_input(&self, input: &NetInput) -> Result<()> {
        match (self.is_hybrid(), input) {
            (true, NetInput::Binary(_)) => Err(Error::InputKind(
                "hybrid network takes a real input".into(),
            )),
            (false, NetInput::Real(_)) => Err(Error::InputKind(
                "pure-binary network takes a packed binary input".into(),
            )),
            _ => {
                if input.len() != self.spec.input.len() {
                    Err(Error::LengthMismatch {
                        expected: self.spec.input.len(),
                        got: input.len(),
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Runs the packed binary pass and returns each layer's binary
    /// activations in layer order.
    pub fn binary_activations(&self, input: &NetInput) -> Result<Vec<PackedBits>> {
        self.check_input(input)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur: Option<PackedBits> = None;
        for layer in &self.layers {
            let next = match (layer, cur.as_ref()) {
                (Layer::Transition(t), None) => match input {
                    NetInput::Real(v) => t.forward(v)?.0,
                    NetInput::Binary(_) => unreachable!("checked"),
                },
                (Layer::Dense(d), None) => match input {
                    NetInput::Binary(p) => d.forward_binary(p)?,
                    NetInput::Real(_) => unreachable!("checked"),
                },
                (Layer::Conv(c), None) => match input {
                    NetInput::Binary(p) => c.forward_binary(p)?,
                    NetInput::Real(_) => unreachable!("checked"),
                },
                (Layer::Dense(d), Some(p)) => d.forward_binary(p)?,
                (Layer::Conv(c), Some(p)) => c.forward_binary(p)?,
                (Layer::Transition(_), Some(_)) => {
                    return Err(Error::Geometry(
                        "transition layer must be the first layer".into(),
                    ))
                }
            };
            outputs.push(next.clone());
            cur = Some(next);
        }
        Ok(outputs)
    }

    /// Packed binary classification: argmax of the output layer's integer
    /// margins, ties to the lowest class index. Deterministic and pure
    /// given synchronized mirrors.
    pub fn infer(&self, input: &NetInput) -> Result<Prediction> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut cur: Option<PackedBits> = None;
        for layer in &self.layers[..last] {
            let next = match (layer, cur.as_ref()) {
                (Layer::Transition(t), None) => match input {
                    NetInput::Real(v) => t.forward(v)?.0,
                    NetInput::Binary(_) => unreachable!("checked"),
                },
                (Layer::Dense(d), None) => match input {
                    NetInput::Binary(p) => d.forward_binary(p)?,
                    NetInput::Real(_) => unreachable!("checked"),
                },
                (Layer::Conv(c), None) => match input {
                    NetInput::Binary(p) => c.forward_binary(p)?,
                    NetInput::Real(_) => unreachable!("checked"),
                },
                (Layer::Dense(d), Some(p)) => d.forward_binary(p)?,
                (Layer::Conv(c), Some(p)) => c.forward_binary(p)?,
                (Layer::Transition(_), Some(_)) => {
                    return Err(Error::Geometry(
                        "transition layer must be the first layer".into(),
                    ))
                }
            };
            cur = Some(next);
        }
        let output_layer = match &self.layers[last] {
            Layer::Dense(d) => d,
            _ => return Err(Error::Geometry("final layer must be dense".into())),
        };
        let margins = match cur.as_ref() {
            Some(p) => output_layer.forward_margins(p)?,
            None => match input {
                NetInput::Binary(p) => output_layer.forward_margins(p)?,
                NetInput::Real(_) => unreachable!("checked"),
            },
        };
        Ok(Prediction {
            class: argmax_margin(&margins),
            margins,
        })
    }

    /// Runs the real-valued shadow pass, retaining every layer's
    /// activations. The sign of each retained activation equals the binary
    /// activation of the packed pass on the same input.
    pub fn shadow_forward(&self, input: &NetInput) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let input_reals = input.to_reals();
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = input_reals.clone();
        for layer in &self.layers {
            let next = match layer {
                Layer::Dense(d) => d.forward_shadow(&cur)?,
                Layer::Conv(c) => c.forward_shadow(&cur)?,
                Layer::Transition(t) => t.forward_shadow(&cur)?,
            };
            outputs.push(next.clone());
            cur = next;
        }
        Ok(ForwardTrace {
            input: input_reals,
            outputs,
        })
    }

    /// Backpropagates from a trace: sign-gated errors at the output neurons
    /// (+1 target for the labeled class, −1 elsewhere), then the surrogate
    /// chain rule layer by layer in reverse. Returns gradients in layer
    /// order. Input deltas of the first layer are not computed.
    pub fn backprop(
        &self,
        trace: &ForwardTrace,
        target_class: usize,
        slope: &SlopeConfig,
    ) -> Result<Vec<LayerGradients>> {
        if target_class >= self.spec.classes {
            return Err(Error::LabelOutOfRange {
                label: target_class,
                classes: self.spec.classes,
            });
        }
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::LengthMismatch {
                expected: self.layers.len(),
                got: trace.outputs.len(),
            });
        }
        let finals = trace.final_outputs();
        let mut deltas = output_deltas(finals, target_class)?;

        let mut grads: Vec<Option<LayerGradients>> = vec![None; self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let layer_input = if k == 0 {
                &trace.input
            } else {
                &trace.outputs[k - 1]
            };
            let mut lg = self.layers[k].backward_impl(layer_input, &deltas, slope, k > 0)?;
            deltas = std::mem::take(&mut lg.input_deltas);
            grads[k] = Some(lg);
        }
        Ok(grads.into_iter().map(|g| g.expect("filled")).collect())
    }
}

/// Sign-gated deltas for the output layer given the target class.
pub(crate) fn output_deltas(final_outputs: &[f64], target_class: usize) -> Result<Vec<f64>> {
    final_outputs
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            let target = if j == target_class { Sign::Plus } else { Sign::Minus };
            math::output_error(y, target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randomize(net: &mut Network, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers_mut() {
            for w in layer.weights_mut() {
                *w = loop {
                    let v = rng.random_range(-0.5..0.5);
                    if v != 0.0 {
                        break v;
                    }
                };
            }
        }
        net.sync_mirrors().unwrap();
    }

    fn random_binary_input(rng: &mut ChaCha8Rng, n: usize) -> NetInput {
        let signs: Vec<Sign> = (0..n)
            .map(|_| if rng.random::<bool>() { Sign::Plus } else { Sign::Minus })
            .collect();
        NetInput::Binary(PackedBits::from_signs(&signs).unwrap())
    }

    #[test]
    fn structure_a_weight_count() {
        let net = Network::structure(StructureId::A);
        assert_eq!(net.weight_count(), 785 * 1571 + 1571 * 10);
        assert_eq!(net.weight_count(), 1_248_945);
    }

    #[test]
    fn structure_c_d_kernel_counts() {
        let c = Network::structure(StructureId::C);
        let kernels: Vec<usize> = c
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv(conv) => conv.in_maps() * conv.out_maps(),
                Layer::Dense(d) => d.fan_in() / 25 * d.fan_out(),
                _ => 0,
            })
            .collect();
        // 7 first-stage kernels, 357 second-stage, 10,251 into the dense
        // stage (counted as 5x5 kernels).
        assert_eq!(kernels[0], 7);
        assert_eq!(kernels[1], 357);
        assert_eq!(kernels[2], 10_251);

        let d = Network::structure(StructureId::D);
        let kernels: Vec<usize> = d
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv(conv) => conv.in_maps() * conv.out_maps(),
                Layer::Dense(dl) => dl.fan_in() / 25 * dl.fan_out(),
                _ => 0,
            })
            .collect();
        assert_eq!(kernels[0], 17);
        assert_eq!(kernels[1], 1_207);
        assert_eq!(kernels[2], 14_271);
    }

    #[test]
    fn structure_e_geometry() {
        let e = Network::structure(StructureId::E);
        assert!(e.is_hybrid());
        match &e.layers()[0] {
            Layer::Transition(t) => {
                assert_eq!(t.out_len(), 17 * 13 * 13);
            }
            _ => panic!("expected transition first"),
        }
        match &e.layers()[1] {
            Layer::Conv(c) => {
                assert_eq!((c.out_h(), c.out_w()), (5, 5));
                assert_eq!(c.field_len(), 425);
            }
            _ => panic!("expected conv second"),
        }
    }

    #[test]
    fn even_hidden_width_rejected() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(785),
            classes: 10,
            layers: vec![
                LayerSpec::Dense { inputs: 785, outputs: 1570 },
                LayerSpec::Dense { inputs: 1570, outputs: 10 },
            ],
        };
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn transition_must_be_first() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(5),
            classes: 3,
            layers: vec![
                LayerSpec::Dense { inputs: 5, outputs: 7 },
                LayerSpec::TransitionDense {
                    inputs: 7,
                    outputs: 9,
                    params: TransitionParams::default(),
                },
                LayerSpec::Dense { inputs: 9, outputs: 3 },
            ],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_margin(&[3, -5, 7, 1]), 2);
        assert_eq!(argmax_margin(&[7, 7, 3]), 0);
        assert_eq!(argmax_margin(&[-4]), 0);
    }

    #[test]
    fn shadow_final_signs_match_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..30 {
            let spec = NetworkSpec {
                input: InputGeometry::Flat(25),
                classes: 5,
                layers: vec![
                    LayerSpec::Dense { inputs: 25, outputs: 11 },
                    LayerSpec::Dense { inputs: 11, outputs: 5 },
                ],
            };
            let mut net = Network::build(&spec).unwrap();
            randomize(&mut net, seed);
            let input = random_binary_input(&mut rng, 25);
            let pred = net.infer(&input).unwrap();
            let trace = net.shadow_forward(&input).unwrap();
            for (j, &m) in pred.margins.iter().enumerate() {
                let shadow_sign = Sign::from_real(trace.final_outputs()[j]);
                let margin_sign = if m >= 0 { Sign::Plus } else { Sign::Minus };
                assert_eq!(shadow_sign, margin_sign);
            }
        }
    }

    #[test]
    fn single_layer_net_reduces_to_dense_shadow() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(7),
            classes: 3,
            layers: vec![LayerSpec::Dense { inputs: 7, outputs: 3 }],
        };
        let mut net = Network::build(&spec).unwrap();
        randomize(&mut net, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let input = random_binary_input(&mut rng, 7);
        let trace = net.shadow_forward(&input).unwrap();
        let dense = match &net.layers()[0] {
            Layer::Dense(d) => d,
            _ => unreachable!(),
        };
        assert_eq!(
            trace.outputs[0],
            dense.forward_shadow(&input.to_reals()).unwrap()
        );
    }

    #[test]
    fn hybrid_first_trace_entry_is_transition_output() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(4),
            classes: 3,
            layers: vec![
                LayerSpec::TransitionDense {
                    inputs: 4,
                    outputs: 9,
                    params: TransitionParams::default(),
                },
                LayerSpec::Dense { inputs: 9, outputs: 3 },
            ],
        };
        let mut net = Network::build(&spec).unwrap();
        randomize(&mut net, 12);
        let input = NetInput::Real(vec![0.3, -0.8, 0.1, 0.9]);
        let trace = net.shadow_forward(&input).unwrap();
        let t = match &net.layers()[0] {
            Layer::Transition(t) => t,
            _ => unreachable!(),
        };
        assert_eq!(trace.outputs[0], t.forward_shadow(&input.to_reals()).unwrap());
    }

    #[test]
    fn backprop_zero_when_all_signs_correct() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let spec = NetworkSpec {
            input: InputGeometry::Flat(9),
            classes: 4,
            layers: vec![
                LayerSpec::Dense { inputs: 9, outputs: 7 },
                LayerSpec::Dense { inputs: 7, outputs: 4 },
            ],
        };
        let mut net = Network::build(&spec).unwrap();
        randomize(&mut net, 16);
        // Find an input/class pair the net already gets sign-right everywhere.
        loop {
            let input = random_binary_input(&mut rng, 9);
            let trace = net.shadow_forward(&input).unwrap();
            let finals = trace.final_outputs();
            let positives: Vec<usize> = finals
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(j, _)| j)
                .collect();
            if positives.len() == 1 {
                let grads = net
                    .backprop(&trace, positives[0], &SlopeConfig::TwoOverN)
                    .unwrap();
                for g in grads {
                    assert!(g.weight_grads.iter().all(|&v| v == 0.0));
                }
                break;
            }
        }
    }

    #[test]
    fn single_layer_backprop_equals_dense_backward() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(5),
            classes: 3,
            layers: vec![LayerSpec::Dense { inputs: 5, outputs: 3 }],
        };
        let mut net = Network::build(&spec).unwrap();
        randomize(&mut net, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = random_binary_input(&mut rng, 5);
        let trace = net.shadow_forward(&input).unwrap();
        let slope = SlopeConfig::TwoOverN;
        let grads = net.backprop(&trace, 1, &slope).unwrap();

        let deltas = output_deltas(trace.final_outputs(), 1).unwrap();
        let dense = match &net.layers()[0] {
            Layer::Dense(d) => d,
            _ => unreachable!(),
        };
        let expected = dense.backward(&trace.input, &deltas, &slope).unwrap();
        assert_eq!(grads[0].weight_grads, expected.weight_grads);
    }

    #[test]
    fn backprop_deltas_scale_linearly() {
        let spec = NetworkSpec {
            input: InputGeometry::Flat(9),
            classes: 3,
            layers: vec![
                LayerSpec::Dense { inputs: 9, outputs: 5 },
                LayerSpec::Dense { inputs: 5, outputs: 3 },
            ],
        };
        let mut net = Network::build(&spec).unwrap();
        randomize(&mut net, 33);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let input = random_binary_input(&mut rng, 9);
        let trace = net.shadow_forward(&input).unwrap();
        let slope = SlopeConfig::TwoOverN;

        // Scale the recorded output activations: errors (and so all
        // gradients) scale by the same factor on mismatched outputs.
        let deltas = output_deltas(trace.final_outputs(), 0).unwrap();
        if deltas.iter().all(|&d| d == 0.0) {
            return; // already perfect; covered elsewhere
        }
        let hidden = &trace.outputs[0];
        let dense = match &net.layers()[0] {
            Layer::Dense(d) => d,
            _ => unreachable!(),
        };
        let out_layer = match &net.layers()[1] {
            Layer::Dense(d) => d,
            _ => unreachable!(),
        };
        let lg = out_layer.backward(hidden, &deltas, &slope).unwrap();
        let scaled: Vec<f64> = deltas.iter().map(|d| 2.0 * d).collect();
        let lg2 = out_layer.backward(hidden, &scaled, &slope).unwrap();
        for (a, b) in lg.input_deltas.iter().zip(&lg2.input_deltas) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let g1 = dense.backward(&trace.input, &lg.input_deltas, &slope).unwrap();
        let g2 = dense.backward(&trace.input, &lg2.input_deltas, &slope).unwrap();
        for (a, b) in g1.weight_grads.iter().zip(&g2.weight_grads) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_is_pure() {
        let mut net = Network::structure(StructureId::A);
        randomize(&mut net, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let input = random_binary_input(&mut rng, 785);
        let a = net.infer(&input).unwrap();
        let b = net.infer(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_kind_checked() {
        let net = Network::structure(StructureId::A);
        assert!(matches!(
            net.infer(&NetInput::Real(vec![0.0; 785])),
            Err(Error::InputKind(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let short = random_binary_input(&mut rng, 10);
        assert!(matches!(
            net.infer(&short),
            Err(Error::LengthMismatch { .. })
        ));
    }
}

//! Binary model checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BDNN" | version u32 (=1) | flags u32 (bit0: shadow weights present)
//! spec block:
//!   geometry tag u8 (0 flat, 1 image) + dims (u32s)
//!   classes u32, layer count u32
//!   per layer: kind u8 (0 dense, 1 conv, 2 transition dense, 3 transition conv)
//!     dense:  inputs u32, outputs u32
//!     conv:   in_maps u32, out_maps u32, kernel u32, stride u32
//!     transition variants add threshold f64 and an activation tag u8 (0 tanh)
//! shadow section: per layer, weight_count x f32
//!   (binary layers only when flags bit0; transition weights always stored)
//! packed section: per binary layer, fan_out rows x ceil(fan_in/64) u64 words
//! train state: seed u64, best_epoch u32, learning_rate f64
//! metadata: length-prefixed (u32) UTF-8
//! ```
//!
//! Invariants checked on load: the packed section equals the sign of the
//! stored shadow section bit for bit, padding bits are zero, and save →
//! load → save reproduces the bytes exactly. Stored f32 weights always
//! carry the same sign as the runtime f64 weights (values whose f32
//! rounding would cross zero are nudged to the smallest normal magnitude),
//! so quantizing to the file format never flips a binary weight.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::math::{Activation, TransitionParams};
use crate::network::{InputGeometry, LayerSpec, Network, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"BDNN";
pub const VERSION: u32 = 1;

const FLAG_HAS_SHADOW: u32 = 1;

/// Training provenance stored alongside the weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    pub best_epoch: u32,
    pub learning_rate: f64,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            seed: 0,
            best_epoch: 0,
            learning_rate: 0.01,
        }
    }
}

/// A loaded model file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub state: TrainState,
    pub metadata: String,
    /// False for packed-only exports (shadow weights of binary layers were
    /// stripped; they load as ±1).
    pub has_shadow: bool,
}

/// Quantizes a shadow weight to f32 without letting rounding flip its sign.
fn shadow_to_f32(v: f64) -> f32 {
    debug_assert!(v.is_finite());
    let f = v as f32;
    if v < 0.0 {
        if f >= 0.0 {
            // Underflowed to (-)0.0, which would read back as +1.
            return -f32::MIN_POSITIVE;
        }
        if f.is_infinite() {
            return f32::MIN;
        }
        f
    } else {
        if f.is_infinite() {
            return f32::MAX;
        }
        f
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes a model. `include_shadow` off strips the binary layers' shadow
/// weights (1 bit per weight remains); transition weights are always kept.
pub fn to_bytes(
    net: &Network,
    state: &TrainState,
    metadata: &str,
    include_shadow: bool,
) -> Result<Vec<u8>> {
    if !net.is_synced() {
        return Err(Error::StaleMirror);
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, if include_shadow { FLAG_HAS_SHADOW } else { 0 });

    let spec = net.spec();
    match spec.input {
        InputGeometry::Flat(n) => {
            out.push(0);
            put_u32(&mut out, n as u32);
        }
        InputGeometry::Image { maps, h, w } => {
            out.push(1);
            put_u32(&mut out, maps as u32);
            put_u32(&mut out, h as u32);
            put_u32(&mut out, w as u32);
        }
    }
    put_u32(&mut out, spec.classes as u32);
    put_u32(&mut out, spec.layers.len() as u32);
    for layer in &spec.layers {
        match layer {
            LayerSpec::Dense { inputs, outputs } => {
                out.push(0);
                put_u32(&mut out, *inputs as u32);
                put_u32(&mut out, *outputs as u32);
            }
            LayerSpec::Conv { in_maps, out_maps, kernel, stride } => {
                out.push(1);
                put_u32(&mut out, *in_maps as u32);
                put_u32(&mut out, *out_maps as u32);
                put_u32(&mut out, *kernel as u32);
                put_u32(&mut out, *stride as u32);
            }
            LayerSpec::TransitionDense { inputs, outputs, params } => {
                out.push(2);
                put_u32(&mut out, *inputs as u32);
                put_u32(&mut out, *outputs as u32);
                put_f64(&mut out, params.threshold);
                out.push(activation_tag(params.activation));
            }
            LayerSpec::TransitionConv { in_maps, out_maps, kernel, stride, params } => {
                out.push(3);
                put_u32(&mut out, *in_maps as u32);
                put_u32(&mut out, *out_maps as u32);
                put_u32(&mut out, *kernel as u32);
                put_u32(&mut out, *stride as u32);
                put_f64(&mut out, params.threshold);
                out.push(activation_tag(params.activation));
            }
        }
    }

    // Shadow section.
    for layer in net.layers() {
        let stored = !layer.is_binary() || include_shadow;
        if stored {
            for &w in layer.weights() {
                put_f32(&mut out, shadow_to_f32(w));
            }
        }
    }

    // Packed section.
    for layer in net.layers() {
        let rows = match layer {
            Layer::Dense(d) => d.packed_rows()?,
            Layer::Conv(c) => c.packed_kernels()?,
            Layer::Transition(_) => continue,
        };
        for row in rows {
            for &word in row.words() {
                put_u64(&mut out, word);
            }
        }
    }

    put_u64(&mut out, state.seed);
    put_u32(&mut out, state.best_epoch);
    put_f64(&mut out, state.learning_rate);

    let meta = metadata.as_bytes();
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(meta);
    Ok(out)
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Tanh => 0,
    }
}

fn activation_from_tag(tag: u8) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Tanh),
        _ => Err(Error::Checkpoint(format!("unknown activation tag {tag}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {} more)",
                self.pos,
                end - self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and validates a model file.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let flags = r.u32()?;
    let has_shadow = flags & FLAG_HAS_SHADOW != 0;

    let input = match r.u8()? {
        0 => InputGeometry::Flat(r.u32()? as usize),
        1 => InputGeometry::Image {
            maps: r.u32()? as usize,
            h: r.u32()? as usize,
            w: r.u32()? as usize,
        },
        tag => return Err(Error::Checkpoint(format!("unknown geometry tag {tag}"))),
    };
    let classes = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let layer = match r.u8()? {
            0 => LayerSpec::Dense {
                inputs: r.u32()? as usize,
                outputs: r.u32()? as usize,
            },
            1 => LayerSpec::Conv {
                in_maps: r.u32()? as usize,
                out_maps: r.u32()? as usize,
                kernel: r.u32()? as usize,
                stride: r.u32()? as usize,
            },
            2 => {
                let inputs = r.u32()? as usize;
                let outputs = r.u32()? as usize;
                let threshold = r.f64()?;
                let activation = activation_from_tag(r.u8()?)?;
                LayerSpec::TransitionDense {
                    inputs,
                    outputs,
                    params: TransitionParams { threshold, activation },
                }
            }
            3 => {
                let in_maps = r.u32()? as usize;
                let out_maps = r.u32()? as usize;
                let kernel = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let threshold = r.f64()?;
                let activation = activation_from_tag(r.u8()?)?;
                LayerSpec::TransitionConv {
                    in_maps,
                    out_maps,
                    kernel,
                    stride,
                    params: TransitionParams { threshold, activation },
                }
            }
            tag => return Err(Error::Checkpoint(format!("unknown layer kind {tag}"))),
        };
        layers.push(layer);
    }
    let spec = NetworkSpec {
        input,
        classes,
        layers,
    };
    let mut network = Network::build(&spec)?;

    // Shadow section.
    let mut shadow_per_layer: Vec<Option<Vec<f64>>> = Vec::with_capacity(layer_count);
    for layer in network.layers() {
        let stored = !layer.is_binary() || has_shadow;
        if stored {
            let mut weights = Vec::with_capacity(layer.weight_count());
            for _ in 0..layer.weight_count() {
                let w = r.f32()?;
                if !w.is_finite() {
                    return Err(Error::Checkpoint("non-finite stored weight".into()));
                }
                weights.push(w as f64);
            }
            shadow_per_layer.push(Some(weights));
        } else {
            shadow_per_layer.push(None);
        }
    }

    // Packed section.
    let mut packed_per_layer: Vec<Option<Vec<Vec<u64>>>> = Vec::with_capacity(layer_count);
    for layer in network.layers() {
        match layer {
            Layer::Dense(d) => {
                let words_per_row = d.fan_in().div_ceil(64);
                let mut rows = Vec::with_capacity(d.fan_out());
                for _ in 0..d.fan_out() {
                    let mut row = Vec::with_capacity(words_per_row);
                    for _ in 0..words_per_row {
                        row.push(r.u64()?);
                    }
                    rows.push(row);
                }
                packed_per_layer.push(Some(rows));
            }
            Layer::Conv(c) => {
                let words_per_row = c.field_len().div_ceil(64);
                let mut rows = Vec::with_capacity(c.out_maps());
                for _ in 0..c.out_maps() {
                    let mut row = Vec::with_capacity(words_per_row);
                    for _ in 0..words_per_row {
                        row.push(r.u64()?);
                    }
                    rows.push(row);
                }
                packed_per_layer.push(Some(rows));
            }
            Layer::Transition(_) => packed_per_layer.push(None),
        }
    }

    let state = TrainState {
        seed: r.u64()?,
        best_epoch: r.u32()?,
        learning_rate: r.f64()?,
    };
    let meta_len = r.u32()? as usize;
    let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("metadata is not valid UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }

    // Install weights: stored shadows where present, signs from the packed
    // section otherwise.
    for (idx, (shadow, packed)) in shadow_per_layer
        .into_iter()
        .zip(&packed_per_layer)
        .enumerate()
    {
        let layer = &mut network.layers_mut()[idx];
        let weights = match (shadow, packed) {
            (Some(w), _) => w,
            (None, Some(rows)) => {
                let per_row = layer.weight_count() / rows.len();
                let mut w = Vec::with_capacity(layer.weight_count());
                for row in rows {
                    let bits = crate::bitpack::PackedBits::from_words(row.clone(), per_row)
                        .map_err(|e| Error::Checkpoint(format!("layer {idx}: {e}")))?;
                    for i in 0..per_row {
                        w.push(bits.get(i).to_f64());
                    }
                }
                w
            }
            (None, None) => unreachable!("transition shadows are always stored"),
        };
        layer.set_weights(weights)?;
    }
    network.sync_mirrors()?;

    // The packed section must equal the sign of the installed weights bit
    // for bit — anything else is corruption.
    for (idx, packed) in packed_per_layer.iter().enumerate() {
        let Some(rows) = packed else { continue };
        let actual = match &network.layers()[idx] {
            Layer::Dense(d) => d.packed_rows()?,
            Layer::Conv(c) => c.packed_kernels()?,
            Layer::Transition(_) => unreachable!(),
        };
        for (row_bits, stored_words) in actual.iter().zip(rows) {
            if row_bits.words() != stored_words.as_slice() {
                return Err(Error::MirrorMismatch);
            }
        }
    }

    Ok(Checkpoint {
        network,
        state,
        metadata,
        has_shadow,
    })
}

pub fn save_file(
    path: &Path,
    net: &Network,
    state: &TrainState,
    metadata: &str,
    include_shadow: bool,
) -> Result<()> {
    let bytes = to_bytes(net, state, metadata, include_shadow)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

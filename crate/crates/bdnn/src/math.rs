//! Scalar and vector math for binary networks.
//!
//! Every neuron and weight of the binary runtime takes one of two values,
//! [`Sign::Minus`] or [`Sign::Plus`]. During training each binary value is
//! shadowed by a finite real number whose sign determines it exactly
//! (`Sign::from_real`, with 0 mapping to +1). The functions here implement
//! both routes — the binary majority rule and its real-valued shadow — plus
//! the surrogate derivatives used for gradient descent and the sign-gated
//! output error.

use std::str::FromStr;

use crate::error::{Error, Result};

/// A binary value, −1 or +1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Sign {
    Minus = -1,
    Plus = 1,
}

impl Sign {
    /// Converts a finite real to its binary value: +1 for `v >= 0`, −1 otherwise.
    ///
    /// Zero maps to +1. Panics on NaN/infinity — shadow values are kept
    /// finite by construction, so a non-finite input is a caller bug.
    #[inline]
    pub fn from_real(v: f64) -> Sign {
        assert!(v.is_finite(), "cannot take the sign of a non-finite value");
        if v >= 0.0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    #[inline]
    pub fn value(self) -> i8 {
        self as i8
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self as i8 as f64
    }

    #[inline]
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    /// Boolean equivalence, i.e. multiplication of ±1 values.
    #[inline]
    pub fn product(self, other: Sign) -> Sign {
        if self == other {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = Error;

    fn try_from(v: i8) -> Result<Sign> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(Error::InputKind(format!("{v} is not a sign value (-1 or 1)"))),
        }
    }
}

impl std::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        self.flip()
    }
}

/// Slope of the surrogate gradient line.
///
/// The default ties the slope to the fan-in as 2/n; a fixed constant is
/// also accepted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlopeConfig {
    TwoOverN,
    Constant(f64),
}

impl SlopeConfig {
    /// Validated constructor for a constant slope (must be positive and finite).
    pub fn constant(v: f64) -> Result<SlopeConfig> {
        if v.is_finite() && v > 0.0 {
            Ok(SlopeConfig::Constant(v))
        } else {
            Err(Error::InvalidSlope(v))
        }
    }

    /// Slope magnitude for a layer of fan-in `n`.
    #[inline]
    pub fn value(&self, fan_in: usize) -> f64 {
        match *self {
            SlopeConfig::TwoOverN => 2.0 / fan_in as f64,
            SlopeConfig::Constant(v) => v,
        }
    }
}

impl Default for SlopeConfig {
    fn default() -> Self {
        SlopeConfig::TwoOverN
    }
}

impl FromStr for SlopeConfig {
    type Err = Error;

    /// Parses `two_over_n` or `constant:<v>`.
    fn from_str(s: &str) -> Result<SlopeConfig> {
        if s == "two_over_n" {
            return Ok(SlopeConfig::TwoOverN);
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("bad slope constant: {v}")))?;
            return SlopeConfig::constant(v);
        }
        Err(Error::Config(format!(
            "unknown slope mode {s:?} (expected two_over_n or constant:<v>)"
        )))
    }
}

/// Activation used by the transition layer. Extensible; tanh is the only
/// member for now.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => u.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Threshold and activation of the transition layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionParams {
    pub threshold: f64,
    pub activation: Activation,
}

impl Default for TransitionParams {
    /// Threshold 0 with tanh: valid because tanh's range is (−1, 1).
    fn default() -> Self {
        TransitionParams {
            threshold: 0.0,
            activation: Activation::Tanh,
        }
    }
}

fn check_lengths(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// Binary neuron rule: the majority sign of the elementwise products
/// `x_i * w_i`, with ties going to +1.
pub fn binary_activation(x: &[Sign], w: &[Sign]) -> Result<Sign> {
    check_lengths(x.len(), w.len())?;
    if x.is_empty() {
        return Err(Error::Empty);
    }
    let mut sum: i64 = 0;
    for (&xi, &wi) in x.iter().zip(w) {
        sum += (xi.value() as i64) * (wi.value() as i64);
    }
    Ok(if sum >= 0 { Sign::Plus } else { Sign::Minus })
}

/// Real-valued shadow of [`binary_activation`]: the mean of the per-element
/// product signs, in [−1, 1] and a multiple of 1/n.
///
/// Each term is `sign(x_i) * sign(w_i)` with sign(0) = +1, so the identity
/// `Sign::from_real(shadow_activation(x, w)) == binary_activation(sign(x), sign(w))`
/// holds exactly for all finite inputs. The fan-in must be odd, which keeps
/// the result nonzero whenever no input is exactly zero.
pub fn shadow_activation(x: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(x.len(), w.len())?;
    let n = x.len();
    if n % 2 == 0 {
        return Err(Error::EvenFanIn(n));
    }
    let mut sum: i64 = 0;
    for (&xi, &wi) in x.iter().zip(w) {
        sum += (Sign::from_real(xi).value() as i64) * (Sign::from_real(wi).value() as i64);
    }
    // |sum| <= n, exact in f64; sign survives the division.
    Ok(sum as f64 / n as f64)
}

/// Surrogate derivative of the shadow activation with respect to one input:
/// the line slope signed by the paired weight. Magnitude ignores |weight|.
#[inline]
pub fn input_grad(weight: f64, fan_in: usize, slope: &SlopeConfig) -> f64 {
    slope.value(fan_in) * Sign::from_real(weight).to_f64()
}

/// Surrogate derivative with respect to one weight; symmetric to
/// [`input_grad`] with the paired input in the weight's role.
#[inline]
pub fn weight_grad(input: f64, fan_in: usize, slope: &SlopeConfig) -> f64 {
    slope.value(fan_in) * Sign::from_real(input).to_f64()
}

#[inline]
fn weighted_sum(g: &[f64], w: &[f64]) -> f64 {
    g.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Transition rule: thresholded activation of the weighted sum, producing a
/// binary value from real inputs.
pub fn transition_binary(g: &[f64], w: &[f64], params: &TransitionParams) -> Result<Sign> {
    check_lengths(g.len(), w.len())?;
    let a = params.activation.apply(weighted_sum(g, w));
    Ok(if a >= params.threshold {
        Sign::Plus
    } else {
        Sign::Minus
    })
}

/// Real-valued shadow of [`transition_binary`]: `activation(sum) - threshold`,
/// whose sign under `Sign::from_real` equals the binary output exactly.
pub fn transition_shadow(g: &[f64], w: &[f64], params: &TransitionParams) -> Result<f64> {
    check_lengths(g.len(), w.len())?;
    Ok(params.activation.apply(weighted_sum(g, w)) - params.threshold)
}

/// Gradients of the transition shadow with respect to inputs and weights:
/// the ordinary chain rule through the activation (the threshold is constant).
pub fn transition_grads(
    g: &[f64],
    w: &[f64],
    params: &TransitionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(g.len(), w.len())?;
    let d = params.activation.derivative(weighted_sum(g, w));
    let wrt_inputs = w.iter().map(|&wi| d * wi).collect();
    let wrt_weights = g.iter().map(|&gi| d * gi).collect();
    Ok((wrt_inputs, wrt_weights))
}

/// Sign-gated output error: zero when the output's sign already matches the
/// target, half the difference otherwise. A zero output is rejected — odd
/// fan-ins guarantee it never occurs in a well-formed network.
pub fn output_error(shadow_out: f64, target: Sign) -> Result<f64> {
    if !shadow_out.is_finite() {
        return Err(Error::NonFinite("output activation"));
    }
    if shadow_out == 0.0 {
        return Err(Error::ZeroOutputActivation);
    }
    let t = target.to_f64();
    if shadow_out * t > 0.0 {
        Ok(0.0)
    } else {
        Ok(0.5 * (shadow_out - t))
    }
}

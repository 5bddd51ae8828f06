//! ReLU, PReLU, Mish and the Growing Cosine Unit, with closed-form
//! derivatives.
//!
//! ```text
//! relu(z)  = max(0, z)                 relu'(z)  = 1 if z > 0 else 0
//! prelu(z) = z if z > 0 else a·z       prelu'(z) = 1 if z > 0 else a
//! mish(z)  = z·tanh(softplus(z))       mish'(z)  = tanh(s) + z·(1 - tanh²(s))·σ(z)
//! gcu(z)   = z·cos(z)                  gcu'(z)   = cos(z) - z·sin(z)
//! ```
//!
//! The `z > 0` test is strict everywhere, so `z = 0` takes the negative
//! branch: `relu'(0) = 0` and `prelu'(0) = a`.
//!
//! PReLU slopes are per channel. For tensors of rank ≥ 2 the channel axis is
//! axis 1 (`[N, C, ...]` or `[N, units]`); a slope vector of length 1 is
//! shared by every element.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Initial PReLU slope for every channel.
pub const PRELU_INIT_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Prelu,
    Mish,
    Gcu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 4] = [Self::Relu, Self::Prelu, Self::Mish, Self::Gcu];

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Prelu => "prelu",
            Self::Mish => "mish",
            Self::Gcu => "gcu",
        }
    }

    /// Name as printed in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Relu => "ReLU",
            Self::Prelu => "PReLU",
            Self::Mish => "Mish",
            Self::Gcu => "GCU",
        }
    }

    pub fn has_parameters(self) -> bool {
        self == Self::Prelu
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "prelu" => Ok(Self::Prelu),
            "mish" => Ok(Self::Mish),
            "gcu" => Ok(Self::Gcu),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation `{other}` (expected relu|prelu|mish|gcu)"
            ))),
        }
    }
}

pub fn relu<T: Element>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

pub fn relu_derivative<T: Element>(z: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn prelu<T: Element>(z: T, alpha: T) -> T {
    if z > T::zero() {
        z
    } else {
        alpha * z
    }
}

pub fn prelu_derivative<T: Element>(z: T, alpha: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        alpha
    }
}

/// `ln(1 + e^z)` as `max(z, 0) + ln(1 + e^-|z|)`, which cannot overflow.
pub fn softplus<T: Element>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn mish<T: Element>(z: T) -> T {
    z * softplus(z).tanh()
}

pub fn mish_derivative<T: Element>(z: T) -> T {
    let t = softplus(z).tanh();
    t + z * (T::one() - t * t) * sigmoid(z)
}

pub fn gcu<T: Element>(z: T) -> T {
    z * z.cos()
}

pub fn gcu_derivative<T: Element>(z: T) -> T {
    z.cos() - z * z.sin()
}

/// The `n` smallest positive zeros of `z·cos(z)`: `π/2 + kπ` for
/// `k = 0..n`. The zero at the origin is not included.
pub fn gcu_zeros(n: usize) -> Vec<f64> {
    use std::f64::consts::{FRAC_PI_2, PI};
    (0..n).map(|k| FRAC_PI_2 + k as f64 * PI).collect()
}

/// Channel index of every element of `z` for a slope vector of length
/// `channels`.
fn channel_layout(z_dims: &[usize], channels: usize) -> Result<(usize, usize)> {
    if channels == 1 {
        return Ok((1, z_dims.iter().product()));
    }
    if z_dims.len() < 2 || z_dims[1] != channels {
        return Err(Error::ShapeMismatch(format!(
            "prelu slope has {channels} channels, input shape {z_dims:?}"
        )));
    }
    Ok((channels, z_dims[2..].iter().product()))
}

fn check_alpha<T: Element>(kind: ActivationKind, alpha: Option<&Tensor<T>>) -> Result<()> {
    match (kind, alpha) {
        (ActivationKind::Prelu, None) => Err(Error::ShapeMismatch("prelu needs a slope vector".into())),
        (ActivationKind::Prelu, Some(a)) if a.rank() != 1 || a.numel() == 0 => Err(
            Error::ShapeMismatch(format!("prelu slope must be a non-empty vector, got {}", a.shape())),
        ),
        (ActivationKind::Prelu, Some(a)) => a.ensure_finite("prelu slope"),
        _ => Ok(()),
    }
}

/// Apply `f(z, slope)` elementwise, looking up the channel slope for PReLU.
fn apply<T: Element>(
    kind: ActivationKind,
    alpha: Option<&Tensor<T>>,
    z: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    check_alpha(kind, alpha)?;
    if !z.is_finite() {
        return Err(Error::NonFiniteInput(kind.name()));
    }
    let Some(alpha) = alpha.filter(|_| kind == ActivationKind::Prelu) else {
        return Ok(z.map(|v| f(v, T::zero())));
    };
    let (channels, inner) = channel_layout(z.dims(), alpha.numel())?;
    let mut out = z.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = f(*v, alpha.data()[(i / inner) % channels]);
    }
    Ok(out)
}

pub fn act_forward<T: Element>(
    kind: ActivationKind,
    alpha: Option<&Tensor<T>>,
    z: &Tensor<T>,
) -> Result<Tensor<T>> {
    match kind {
        ActivationKind::Relu => apply(kind, alpha, z, |v, _| relu(v)),
        ActivationKind::Prelu => apply(kind, alpha, z, prelu),
        ActivationKind::Mish => apply(kind, alpha, z, |v, _| mish(v)),
        ActivationKind::Gcu => apply(kind, alpha, z, |v, _| gcu(v)),
    }
}

pub fn act_derivative<T: Element>(
    kind: ActivationKind,
    alpha: Option<&Tensor<T>>,
    z: &Tensor<T>,
) -> Result<Tensor<T>> {
    match kind {
        ActivationKind::Relu => apply(kind, alpha, z, |v, _| relu_derivative(v)),
        ActivationKind::Prelu => apply(kind, alpha, z, prelu_derivative),
        ActivationKind::Mish => apply(kind, alpha, z, |v, _| mish_derivative(v)),
        ActivationKind::Gcu => apply(kind, alpha, z, |v, _| gcu_derivative(v)),
    }
}

/// `∂L/∂a_c = Σ upstream·z` over the elements of channel `c` with `z < 0`.
pub fn prelu_param_grad<T: Element>(
    z: &Tensor<T>,
    upstream: &Tensor<T>,
    channels: usize,
) -> Result<Tensor<T>> {
    z.expect_same_shape(upstream, "prelu_param_grad")?;
    let (channels, inner) = channel_layout(z.dims(), channels)?;
    let mut grad = vec![T::zero(); channels];
    for (i, (&zv, &g)) in z.data().iter().zip(upstream.data()).enumerate() {
        if zv < T::zero() {
            let c = (i / inner) % channels;
            grad[c] = grad[c] + g * zv;
        }
    }
    Tensor::from_vec(&[channels], grad)
}

impl<T: Element> Tape<T> {
    /// Record `kind(z)`. `alpha` must be the slope node for PReLU and is
    /// ignored otherwise.
    pub fn activation(&mut self, kind: ActivationKind, z: NodeId, alpha: Option<NodeId>) -> Result<NodeId> {
        let alpha = alpha.filter(|_| kind == ActivationKind::Prelu);
        let value = {
            let slope = match alpha {
                Some(a) => Some(self.node(a)?.value()),
                None => None,
            };
            act_forward(kind, slope, self.node(z)?.value())?
        };
        let inputs: Vec<NodeId> = std::iter::once(z).chain(alpha).collect();
        self.record(
            kind.name(),
            &inputs,
            value,
            Box::new(move |c| {
                let z = c.inputs[0];
                let a = c.inputs.get(1).copied();
                let dz = act_derivative(kind, a, z)?.mul(c.upstream)?;
                match a {
                    Some(a) => Ok(vec![dz, prelu_param_grad(z, c.upstream, a.numel())?]),
                    None => Ok(vec![dz]),
                }
            }),
        )
    }
}

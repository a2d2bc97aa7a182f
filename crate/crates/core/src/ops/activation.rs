use std::str::FromStr;

use crate::error::{arg_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    /// `x * sigmoid(x)`
    Swish,
    Sigmoid,
    Relu,
}

impl FromStr for ActKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swish" | "silu" => Ok(ActKind::Swish),
            "sigmoid" => Ok(ActKind::Sigmoid),
            "relu" => Ok(ActKind::Relu),
            other => Err(arg_err!("unknown activation {other:?}")),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl ActKind {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActKind::Swish => x * sigmoid(x),
            ActKind::Sigmoid => sigmoid(x),
            ActKind::Relu => x.max(T::zero()),
        }
    }

    /// Derivative with respect to the pre-activation input.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            ActKind::Swish => {
                let s = sigmoid(x);
                s + x * s * (T::one() - s)
            }
            ActKind::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            ActKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

pub fn activation<T: Scalar>(kind: ActKind, input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| kind.apply(v))
}

/// `input` is the pre-activation tensor seen by the forward pass.
pub fn activation_backward<T: Scalar>(
    kind: ActKind,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    input.zip_map(grad_out, |x, g| g * kind.derivative(x))
}

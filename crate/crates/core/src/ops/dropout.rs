//! Inverted dropout: survivors are scaled by `1/(1-p)` so the expectation is
//! unchanged and inference is the identity.

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::ops::Mode;
use crate::tensor::{c, Scalar, Tensor};

/// Per-element multipliers applied in the forward pass (0 or `1/(1-p)`),
/// reused by the backward pass. `None` means the layer was the identity.
#[derive(Clone, Debug, Default)]
pub struct DropMask<T>(Option<Vec<T>>);

impl<T: Scalar> DropMask<T> {
    pub fn identity() -> Self {
        DropMask(None)
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.0 {
            None => Ok(grad_out.clone()),
            Some(m) => Tensor::from_vec(
                grad_out.shape(),
                grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect(),
            ),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(arg_err!("dropout probability {p} outside [0, 1)"));
    }
    Ok(())
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, DropMask<T>)> {
    check_p(p)?;
    if mode == Mode::Inference || p == 0.0 {
        return Ok((input.clone(), DropMask::identity()));
    }
    let keep: T = c(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &k)| x * k).collect();
    Ok((Tensor::from_vec(input.shape(), out)?, DropMask(Some(mask))))
}

/// Dropout of whole samples: each sample's tensor is kept (and rescaled) or
/// zeroed as a unit. Used on residual branches.
pub fn drop_path<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, DropMask<T>)> {
    check_p(p)?;
    if mode == Mode::Inference || p == 0.0 || input.is_empty() {
        return Ok((input.clone(), DropMask::identity()));
    }
    let n = input.shape()[0];
    let per = input.len() / n;
    let keep: T = c(1.0 / (1.0 - p));
    let mut mask = Vec::with_capacity(input.len());
    for _ in 0..n {
        let k = if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        };
        mask.extend(std::iter::repeat_n(k, per));
    }
    let out = input.data().iter().zip(&mask).map(|(&x, &k)| x * k).collect();
    Ok((Tensor::from_vec(input.shape(), out)?, DropMask(Some(mask))))
}

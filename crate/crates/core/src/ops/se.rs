//! Squeeze-and-excitation gating: GAP → FC(C/r) → swish → FC(C) → sigmoid,
//! then a per-channel rescale of the input.

use crate::error::{arg_err, dim_err, Result};
use crate::ops::activation::ActKind;
use crate::ops::linear::{fully_connected, fully_connected_backward};
use crate::ops::pool::global_avg_pool;
use crate::tensor::{Scalar, Tensor};

/// Width of the bottleneck for `channels` inputs at reduction `ratio`.
pub fn se_reduced_channels(channels: usize, ratio: usize) -> Result<usize> {
    if ratio == 0 {
        return Err(arg_err!("squeeze-excite ratio must be at least 1"));
    }
    match channels / ratio {
        0 => Err(arg_err!(
            "squeeze-excite ratio {ratio} exceeds {channels} channels"
        )),
        r => Ok(r),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SeWeights<'a, T> {
    /// `C×R`
    pub reduce_w: &'a Tensor<T>,
    pub reduce_b: &'a [T],
    /// `R×C`
    pub expand_w: &'a Tensor<T>,
    pub expand_b: &'a [T],
}

#[derive(Clone, Debug)]
pub struct SeCache<T> {
    pooled: Tensor<T>,
    z1: Tensor<T>,
    a1: Tensor<T>,
    gate: Tensor<T>,
}

impl<T> SeCache<T> {
    /// The `N×C` gate values in (0, 1).
    pub fn gate(&self) -> &Tensor<T> {
        &self.gate
    }
}

#[derive(Clone, Debug)]
pub struct SeGrads<T> {
    pub reduce_w: Tensor<T>,
    pub reduce_b: Vec<T>,
    pub expand_w: Tensor<T>,
    pub expand_b: Vec<T>,
}

pub fn squeeze_excite<T: Scalar>(
    input: &Tensor<T>,
    reduce_ratio: usize,
    w: SeWeights<'_, T>,
) -> Result<(Tensor<T>, SeCache<T>)> {
    let (n, ch, h, wd) = input.dims4()?;
    let r = se_reduced_channels(ch, reduce_ratio)?;
    if w.reduce_w.shape() != [ch, r] || w.expand_w.shape() != [r, ch] {
        return Err(dim_err!(
            "squeeze-excite weights {:?}/{:?} do not match {ch} channels at ratio {reduce_ratio}",
            w.reduce_w.shape(),
            w.expand_w.shape()
        ));
    }
    let pooled = global_avg_pool(input)?;
    let z1 = fully_connected(&pooled, w.reduce_w, w.reduce_b)?;
    let a1 = z1.map(|v| ActKind::Swish.apply(v));
    let z2 = fully_connected(&a1, w.expand_w, w.expand_b)?;
    let gate = z2.map(|v| ActKind::Sigmoid.apply(v));

    let plane = h * wd;
    let mut out = input.data().to_vec();
    for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
        let g = gate.data()[i];
        chunk.iter_mut().for_each(|v| *v = *v * g);
    }
    debug_assert_eq!(out.len(), n * ch * plane);
    Ok((
        Tensor::from_vec(input.shape(), out)?,
        SeCache {
            pooled,
            z1,
            a1,
            gate,
        },
    ))
}

pub fn squeeze_excite_backward<T: Scalar>(
    input: &Tensor<T>,
    w: SeWeights<'_, T>,
    cache: &SeCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SeGrads<T>)> {
    input.check_same_shape(grad_out)?;
    let (n, ch, h, wd) = input.dims4()?;
    let plane = h * wd;
    let x = input.data();
    let g = grad_out.data();

    // d(out)/d(x) through the gate multiply, and d(loss)/d(gate).
    let mut dx = vec![T::zero(); x.len()];
    let mut dgate = vec![T::zero(); n * ch];
    for i in 0..n * ch {
        let gv = cache.gate.data()[i];
        let mut acc = T::zero();
        for j in i * plane..(i + 1) * plane {
            dx[j] = g[j] * gv;
            acc = acc + g[j] * x[j];
        }
        dgate[i] = acc;
    }
    let dz2: Vec<T> = dgate
        .iter()
        .zip(cache.gate.data())
        .map(|(&d, &s)| d * s * (T::one() - s))
        .collect();
    let dz2 = Tensor::from_vec(&[n, ch], dz2)?;
    let (da1, d_expand_w, d_expand_b) = fully_connected_backward(&cache.a1, w.expand_w, &dz2)?;
    let dz1 = da1.zip_map(&cache.z1, |d, z| d * ActKind::Swish.derivative(z))?;
    let (dpooled, d_reduce_w, d_reduce_b) =
        fully_connected_backward(&cache.pooled, w.reduce_w, &dz1)?;

    let z = T::from_usize(plane).unwrap();
    for i in 0..n * ch {
        let share = dpooled.data()[i] / z;
        for v in &mut dx[i * plane..(i + 1) * plane] {
            *v = *v + share;
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        SeGrads {
            reduce_w: d_reduce_w,
            reduce_b: d_reduce_b,
            expand_w: d_expand_w,
            expand_b: d_expand_b,
        },
    ))
}

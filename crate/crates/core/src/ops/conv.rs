//! Dense and depthwise 2-D convolution over NCHW tensors.
//!
//! Kernels use OIHW layout for dense convolution and `C×1×k×k` for depthwise.
//! "Same" padding pads symmetrically with zeros and puts the extra row or
//! column on the bottom/right when the total is odd.

use std::str::FromStr;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(arg_err!("unknown padding {other:?}")),
        }
    }
}

/// Resolved spatial geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(arg_err!("stride must be positive"));
        }
        if kernel == 0 {
            return Err(dim_err!("kernel extent must be positive"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = in_h.div_ceil(stride);
                let ow = in_w.div_ceil(stride);
                let ph = ((oh - 1) * stride + kernel).saturating_sub(in_h);
                let pw = ((ow - 1) * stride + kernel).saturating_sub(in_w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if in_h < kernel || in_w < kernel {
                    return Err(dim_err!(
                        "valid convolution needs input {}x{} >= kernel {}",
                        in_h,
                        in_w,
                        kernel
                    ));
                }
                ((in_h - kernel) / stride + 1, (in_w - kernel) / stride + 1, 0, 0)
            }
        };
        if out_h == 0 || out_w == 0 {
            return Err(dim_err!("empty convolution output for input {in_h}x{in_w}"));
        }
        Ok(ConvGeometry {
            kernel,
            stride,
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    /// Output indices `o` for which `o*stride + offset - pad` lands inside `[0, len)`.
    #[inline]
    fn span(offset: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
        let off = offset as isize - pad as isize;
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(stride)
        };
        let last = len as isize - 1 - off;
        if last < 0 {
            return (0, 0);
        }
        let hi = (last as usize / stride + 1).min(out);
        (lo.min(hi), hi)
    }

    #[inline]
    fn rows(&self, kh: usize) -> (usize, usize) {
        Self::span(kh, self.pad_top, self.stride, self.in_h, self.out_h)
    }

    #[inline]
    fn cols(&self, kw: usize) -> (usize, usize) {
        Self::span(kw, self.pad_left, self.stride, self.in_w, self.out_w)
    }
}

fn dense_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize, ConvGeometry)> {
    let (n, ci, h, w) = input.dims4()?;
    let [co, ki, kh, kw] = kernels.shape()[..] else {
        return Err(dim_err!("kernels must be OIHW, got {:?}", kernels.shape()));
    };
    if ki != ci {
        return Err(dim_err!(
            "input has {ci} channels but kernels expect {ki}"
        ));
    }
    if kh != kw {
        return Err(dim_err!("kernel must be square, got {kh}x{kw}"));
    }
    Ok((n, ci, co, ConvGeometry::new(h, w, kh, stride, padding)?))
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, ci, co, g) = dense_geometry(input, kernels, stride, padding)?;
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![T::zero(); n * co * out_plane];

    for b in 0..n {
        for o in 0..co {
            let dst = &mut out[(b * co + o) * out_plane..][..out_plane];
            for i in 0..ci {
                let src = &x[(b * ci + i) * in_plane..][..in_plane];
                for kh in 0..k {
                    let (oy0, oy1) = g.rows(kh);
                    for kw in 0..k {
                        let wv = wt[((o * ci + i) * k + kh) * k + kw];
                        let (ox0, ox1) = g.cols(kw);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad_top;
                            let drow = &mut dst[oy * g.out_w..][..g.out_w];
                            let srow = &src[iy * g.in_w..][..g.in_w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kw - g.pad_left;
                                for (d, &s) in drow[ox0..ox1].iter_mut().zip(&srow[ix0..]) {
                                    *d = *d + wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kw - g.pad_left;
                                    drow[ox] = drow[ox] + wv * srow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, g.out_h, g.out_w], out)
}

/// Gradients of `conv2d` with respect to its input and kernels.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, ci, co, g) = dense_geometry(input, kernels, stride, padding)?;
    if grad_out.shape() != [n, co, g.out_h, g.out_w] {
        return Err(dim_err!(
            "conv2d grad has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, co, g.out_h, g.out_w]
        ));
    }
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let x = input.data();
    let wt = kernels.data();
    let go = grad_out.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wt.len()];

    for b in 0..n {
        for o in 0..co {
            let gplane = &go[(b * co + o) * out_plane..][..out_plane];
            for i in 0..ci {
                let src = &x[(b * ci + i) * in_plane..][..in_plane];
                let dsrc = &mut dx[(b * ci + i) * in_plane..][..in_plane];
                for kh in 0..k {
                    let (oy0, oy1) = g.rows(kh);
                    for kw in 0..k {
                        let widx = ((o * ci + i) * k + kh) * k + kw;
                        let wv = wt[widx];
                        let (ox0, ox1) = g.cols(kw);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad_top;
                            let grow = &gplane[oy * g.out_w..][..g.out_w];
                            let srow = &src[iy * g.in_w..][..g.in_w];
                            let drow = &mut dsrc[iy * g.in_w..][..g.in_w];
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kw - g.pad_left;
                                acc = acc + grow[ox] * srow[ix];
                                drow[ix] = drow[ix] + wv * grow[ox];
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(kernels.shape(), dw)?,
    ))
}

fn depthwise_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, ch, h, w) = input.dims4()?;
    let [kc, one, kh, kw] = kernels.shape()[..] else {
        return Err(dim_err!(
            "depthwise kernels must be Cx1xkxk, got {:?}",
            kernels.shape()
        ));
    };
    if kc != ch || one != 1 {
        return Err(dim_err!(
            "depthwise kernels {:?} do not match {ch} input channels",
            kernels.shape()
        ));
    }
    if kh != kw {
        return Err(dim_err!("kernel must be square, got {kh}x{kw}"));
    }
    Ok((n, ch, ConvGeometry::new(h, w, kh, stride, padding)?))
}

pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, ch, g) = depthwise_geometry(input, kernels, stride, padding)?;
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![T::zero(); n * ch * out_plane];

    for b in 0..n {
        for c in 0..ch {
            let src = &x[(b * ch + c) * in_plane..][..in_plane];
            let dst = &mut out[(b * ch + c) * out_plane..][..out_plane];
            for kh in 0..k {
                let (oy0, oy1) = g.rows(kh);
                for kw in 0..k {
                    let wv = wt[(c * k + kh) * k + kw];
                    let (ox0, ox1) = g.cols(kw);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + kh - g.pad_top;
                        let drow = &mut dst[oy * g.out_w..][..g.out_w];
                        let srow = &src[iy * g.in_w..][..g.in_w];
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kw - g.pad_left;
                            drow[ox] = drow[ox] + wv * srow[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, ch, g.out_h, g.out_w], out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, ch, g) = depthwise_geometry(input, kernels, stride, padding)?;
    if grad_out.shape() != [n, ch, g.out_h, g.out_w] {
        return Err(dim_err!(
            "depthwise grad has shape {:?}, expected {:?}",
            grad_out.shape(),
            [n, ch, g.out_h, g.out_w]
        ));
    }
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let x = input.data();
    let wt = kernels.data();
    let go = grad_out.data();
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wt.len()];

    for b in 0..n {
        for c in 0..ch {
            let src = &x[(b * ch + c) * in_plane..][..in_plane];
            let dsrc = &mut dx[(b * ch + c) * in_plane..][..in_plane];
            let gplane = &go[(b * ch + c) * out_plane..][..out_plane];
            for kh in 0..k {
                let (oy0, oy1) = g.rows(kh);
                for kw in 0..k {
                    let widx = (c * k + kh) * k + kw;
                    let wv = wt[widx];
                    let (ox0, ox1) = g.cols(kw);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + kh - g.pad_top;
                        let grow = &gplane[oy * g.out_w..][..g.out_w];
                        let srow = &src[iy * g.in_w..][..g.in_w];
                        let drow = &mut dsrc[iy * g.in_w..][..g.in_w];
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kw - g.pad_left;
                            acc = acc + grow[ox] * srow[ix];
                            drow[ix] = drow[ix] + wv * grow[ox];
                        }
                    }
                    dw[widx] = dw[widx] + acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), dx)?,
        Tensor::from_vec(kernels.shape(), dw)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct summation with explicit zero padding, independent of the span logic.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad_top: usize,
        pad_left: usize,
        out_h: usize,
        out_w: usize,
    ) -> Vec<f64> {
        let (n, ci, h, wd) = x.dims4().unwrap();
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let mut out = vec![0.0; n * co * out_h * out_w];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut s = 0.0;
                        for i in 0..ci {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let iy = (oy * stride + kh) as isize - pad_top as isize;
                                    let ix = (ox * stride + kw) as isize - pad_left as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += w.data()[((o * ci + i) * k + kh) * k + kw]
                                        * x.data()[((b * ci + i) * h + iy as usize) * wd
                                            + ix as usize];
                                }
                            }
                        }
                        out[((b * co + o) * out_h + oy) * out_w + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) * scale).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = ramp(&[1, 1, 4, 5], 0.3);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_valid_sums_to_nine() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn strided_same_shape() {
        let x = Tensor::<f32>::zeros(&[2, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(&[16, 3, 3, 3]);
        assert_eq!(
            conv2d(&x, &w, 2, Padding::Same).unwrap().shape(),
            &[2, 16, 4, 4]
        );
        let x = Tensor::<f32>::zeros(&[1, 3, 7, 7]);
        assert_eq!(
            conv2d(&x, &w, 2, Padding::Valid).unwrap().shape(),
            &[1, 16, 3, 3]
        );
    }

    #[test]
    fn matches_naive_summation() {
        for &(h, w, k, s, pad) in &[
            (7, 6, 3, 1, Padding::Same),
            (7, 7, 3, 2, Padding::Same),
            (8, 8, 5, 2, Padding::Same),
            (6, 9, 3, 2, Padding::Valid),
            (5, 5, 1, 1, Padding::Valid),
        ] {
            let x = ramp(&[2, 3, h, w], 0.1);
            let kt = ramp(&[4, 3, k, k], 0.05);
            let g = ConvGeometry::new(h, w, k, s, pad).unwrap();
            let y = conv2d(&x, &kt, s, pad).unwrap();
            let want = naive_conv(&x, &kt, s, g.pad_top, g.pad_left, g.out_h, g.out_w);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_padding_extra_goes_bottom_right() {
        let g = ConvGeometry::new(8, 8, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 0));
        let g = ConvGeometry::new(7, 7, 5, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (7, 2));
        let g = ConvGeometry::new(8, 8, 2, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (8, 0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, 1, Padding::Same),
            Err(Error::Dimension(_))
        ));
        let w = Tensor::<f32>::zeros(&[2, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, 0, Padding::Same),
            Err(Error::Argument(_))
        ));
        let dw = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
        assert!(matches!(
            depthwise_conv2d(&x, &dw, 1, Padding::Same),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn depthwise_identity_and_null_kernel() {
        let x = ramp(&[1, 2, 4, 4], 0.2);
        let ones = Tensor::<f64>::full(&[2, 1, 1, 1], 1.0);
        assert_eq!(depthwise_conv2d(&x, &ones, 1, Padding::Same).unwrap(), x);

        let w = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 1.0]).unwrap();
        let y = depthwise_conv2d(&x, &w, 1, Padding::Same).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.0));
        assert_eq!(&y.data()[16..], &x.data()[16..]);
    }

    #[test]
    fn depthwise_average_of_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 5.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = depthwise_conv2d(&x, &w, 1, Padding::Same).unwrap();
        assert!((y.data()[2 * 5 + 2] - 5.0).abs() < 1e-12);
        // Corner sees four of nine taps.
        assert!((y.data()[0] - 20.0 / 9.0).abs() < 1e-12);
    }
}

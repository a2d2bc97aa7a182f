//! In-memory grayscale and RGB rasters plus bilinear resampling.

use crate::error::{dim_err, Result};
use crate::tensor::{c, Scalar, Tensor};

/// Row-major single-channel image, nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(dim_err!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                data.len()
            ));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let data = resize_bilinear(
            &self.data.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
            self.width,
            self.height,
            width,
            height,
        );
        GrayImage {
            width,
            height,
            data: data.into_iter().map(|v| v as f32).collect(),
        }
    }

    /// `1×3×H×W` tensor with the single channel replicated three times.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend(self.data.iter().map(|&v| c::<T>(f64::from(v))));
        }
        Tensor::from_vec(&[1, 3, self.height, self.width], data).unwrap()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(f64::from(v))).collect()
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Maps [0, 1] to 0..=255 with rounding and clamping.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Resamples a row-major `src_w×src_h` plane to `dst_w×dst_h`.
pub fn resize_bilinear(src: &[f64], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    let sx = src_w as f64 / dst_w as f64;
    let sy = src_h as f64 / dst_h as f64;
    let axis = |d: usize, scale: f64, len: usize| {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let (y0, y1, fy) = axis(y, sy, src_h);
        for x in 0..dst_w {
            let (x0, x1, fx) = axis(x, sx, src_w);
            let top = src[y0 * src_w + x0] * (1.0 - fx) + src[y0 * src_w + x1] * fx;
            let bot = src[y1 * src_w + x0] * (1.0 - fx) + src[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_exact() {
        let img = GrayImage::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.resize(3, 2), img);
    }

    #[test]
    fn upsample_two_to_four() {
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = img.resize(4, 4);
        for row in up.data.chunks(4) {
            for (a, b) in row.iter().zip([0.0, 0.25, 0.75, 1.0]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tensor_replicates_channel() {
        let img = GrayImage::new(2, 1, vec![0.25, 0.5]).unwrap();
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[0.25, 0.5, 0.25, 0.5, 0.25, 0.5]);
    }
}

//! Training-time affine augmentation: horizontal flip, rotation, shear and zoom.
//!
//! The transform is anchored at the image centre and composed in a fixed
//! order (flip, rotate, shear, zoom). Output pixels are filled by inverse
//! mapping with bilinear interpolation; samples outside the source are zero.

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::image::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub rotation_deg: (f64, f64),
    pub shear_deg: (f64, f64),
    pub zoom: (f64, f64),
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            rotation_deg: (-10.0, 10.0),
            shear_deg: (-10.0, 10.0),
            zoom: (0.9, 1.1),
            flip_prob: 0.5,
        }
    }
}

impl AugmentRanges {
    /// Ranges that always produce the identity transform.
    pub fn none() -> Self {
        AugmentRanges {
            rotation_deg: (0.0, 0.0),
            shear_deg: (0.0, 0.0),
            zoom: (1.0, 1.0),
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("rotation", self.rotation_deg),
            ("shear", self.shear_deg),
            ("zoom", self.zoom),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(arg_err!("{name} range [{lo}, {hi}] is inverted or not finite"));
            }
        }
        if !(self.zoom.0 > 0.0) {
            return Err(arg_err!("zoom must be positive"));
        }
        if self.shear_deg.0 <= -90.0 || self.shear_deg.1 >= 90.0 {
            return Err(arg_err!("shear must lie strictly inside (-90, 90) degrees"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(arg_err!("flip probability {} outside [0, 1]", self.flip_prob));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub flip: bool,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub zoom: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        flip: false,
        rotation_deg: 0.0,
        shear_deg: 0.0,
        zoom: 1.0,
    };

    /// Forward 2×2 map on centred `(x, y)` coordinates: zoom · shear · rotate · flip.
    fn matrix(&self) -> [[f64; 2]; 2] {
        let f = if self.flip { -1.0 } else { 1.0 };
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let z = self.zoom;
        // rotate · flip
        let rf = [[c * f, -s], [s * f, c]];
        // shear (x += k*y) · rf
        let sh = [
            [rf[0][0] + k * rf[1][0], rf[0][1] + k * rf[1][1]],
            [rf[1][0], rf[1][1]],
        ];
        [[z * sh[0][0], z * sh[0][1]], [z * sh[1][0], z * sh[1][1]]]
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_affine<R: Rng + ?Sized>(ranges: &AugmentRanges, rng: &mut R) -> Result<AffineParams> {
    ranges.validate()?;
    Ok(AffineParams {
        flip: rng.random::<f64>() < ranges.flip_prob,
        rotation_deg: uniform(rng, ranges.rotation_deg),
        shear_deg: uniform(rng, ranges.shear_deg),
        zoom: uniform(rng, ranges.zoom),
    })
}

/// Zero-filled bilinear sample at fractional `(x, y)`.
fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let px = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= img.height as isize || c >= img.width as isize {
            0.0
        } else {
            f64::from(img.get(r as usize, c as usize))
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let w = wy * wx;
            if w != 0.0 {
                v += w * px(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

pub fn apply_affine(image: &GrayImage, params: &AffineParams) -> GrayImage {
    let m = params.matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let cx = (image.width as f64 - 1.0) / 2.0;
    let cy = (image.height as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(image.data.len());
    for r in 0..image.height {
        for col in 0..image.width {
            let u = col as f64 - cx;
            let v = r as f64 - cy;
            let sx = inv[0][0] * u + inv[0][1] * v + cx;
            let sy = inv[1][0] * u + inv[1][1] * v + cy;
            out.push(sample(image, sx, sy) as f32);
        }
    }
    GrayImage {
        width: image.width,
        height: image.height,
        data: out,
    }
}

//! Grad-CAM saliency: gradient-weighted sums of a convolutional block's
//! activation maps, upsampled to the input and blended over the image.

use crate::error::{arg_err, dim_err, Result};
use crate::image::{quantize, resize_bilinear, GrayImage, RgbImage};
use crate::model::{Feature, ModelParams};
use crate::tensor::{Scalar, Tensor};

pub const OVERLAY_ALPHA: f64 = 0.4;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    /// `ReLU(Σ_k w_k A^k)` at feature resolution, unnormalized.
    pub raw: Vec<f64>,
    pub raw_height: usize,
    pub raw_width: usize,
    /// Normalized to [0, 1] and bilinearly upsampled to the input size.
    pub map: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub target_class: usize,
    pub snapshot: usize,
}

impl HeatMap {
    /// Share of the total heat falling inside the given rows and columns.
    pub fn mass_fraction(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
        let total: f64 = self.map.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = rows
            .flat_map(|r| cols.clone().map(move |c| (r, c)))
            .map(|(r, c)| self.map[r * self.width + c])
            .sum();
        inside / total
    }
}

/// `ReLU(Σ_k w_k A^k)` with `w_k` the spatial mean of `∂Y/∂A^k`. Both inputs
/// are `K×H×W`, row-major.
pub fn cam_from_activations(acts: &[f64], grads: &[f64], k: usize, h: usize, w: usize) -> Result<Vec<f64>> {
    if acts.len() != k * h * w || grads.len() != acts.len() || h * w == 0 {
        return Err(dim_err!(
            "activations/gradients of length {}/{} do not match {k}x{h}x{w}",
            acts.len(),
            grads.len()
        ));
    }
    let z = (h * w) as f64;
    let mut map = vec![0.0; h * w];
    for (a, g) in acts.chunks(h * w).zip(grads.chunks(h * w)) {
        let weight = g.iter().sum::<f64>() / z;
        for (m, &v) in map.iter_mut().zip(a) {
            *m += weight * v;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(map)
}

/// Scales so the maximum is 1; an all-zero map stays zero.
pub fn normalize(map: &mut [f64]) {
    let max = map.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        map.iter_mut().for_each(|v| *v /= max);
    }
}

/// Gradient of the softmax probability `p_c` with respect to the logits:
/// `p_c (δ_cj − p_j)`. The diagonal uses `Σ_{j≠c} p_j` in place of `1 − p_c`
/// so it does not cancel to zero when `p_c` rounds to 1.
pub fn probability_gradient<T: Scalar>(probs: &[T], c: usize) -> Vec<T> {
    let pc = probs[c];
    let rest: T = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != c)
        .map(|(_, &p)| p)
        .sum();
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == c { pc * rest } else { -pc * p })
        .collect()
}

/// Grad-CAM for one image (`3×R×R` or `1×3×R×R`) under `model`.
pub fn compute_cam<T: Scalar>(
    model: &ModelParams<T>,
    image: &Tensor<T>,
    target_class: usize,
    layer: Feature,
    snapshot: usize,
) -> Result<HeatMap> {
    let batch = match image.rank() {
        3 => {
            let s = image.shape();
            image.clone().reshape(&[1, s[0], s[1], s[2]])?
        }
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(dim_err!(
                "Grad-CAM takes one image, got shape {:?}",
                image.shape()
            ))
        }
    };
    let classes = model.spec().num_classes;
    if target_class >= classes {
        return Err(arg_err!("target class {target_class} outside {classes} classes"));
    }
    let pass = model.infer(&batch)?;
    let grad_logits = Tensor::from_vec(&[1, classes], probability_gradient(pass.probs.data(), target_class))?;
    let grads = model.feature_gradient(&pass, &grad_logits, layer)?;
    let acts = pass.feature(layer)?;
    let (_, k, h, w) = acts.dims4()?;
    let to64 = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f64().unwrap()).collect::<Vec<_>>();
    let raw = cam_from_activations(&to64(acts), &to64(&grads), k, h, w)?;
    let mut scaled = raw.clone();
    normalize(&mut scaled);
    let (_, _, height, width) = batch.dims4()?;
    let mut map = resize_bilinear(&scaled, w, h, width, height);
    normalize(&mut map);
    Ok(HeatMap {
        raw,
        raw_height: h,
        raw_width: w,
        map,
        height,
        width,
        target_class,
        snapshot,
    })
}

/// Blue → cyan → green → yellow → red over [0, 1].
pub fn color_ramp(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let x = v.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|ch| a[ch] + (b[ch] - a[ch]) * f)
}

/// Blends the ramp colour over the grayscale image with per-pixel opacity
/// `0.4 · heat`, so cold pixels keep the original intensity.
pub fn render_overlay(heat: &HeatMap, image: &GrayImage) -> Result<RgbImage> {
    if heat.width != image.width || heat.height != image.height {
        return Err(dim_err!(
            "heatmap {}x{} does not match image {}x{}",
            heat.width,
            heat.height,
            image.width,
            image.height
        ));
    }
    let mut data = Vec::with_capacity(3 * image.data.len());
    for (&h, &g) in heat.map.iter().zip(&image.data) {
        let alpha = OVERLAY_ALPHA * h;
        let g = f64::from(g);
        for ch in color_ramp(h) {
            data.push(quantize((1.0 - alpha) * g + alpha * ch));
        }
    }
    Ok(RgbImage {
        width: image.width,
        height: image.height,
        data,
    })
}

/// Convenience wrapper converting a grayscale image to the model input.
pub fn compute_cam_for_image<T: Scalar>(
    model: &ModelParams<T>,
    image: &GrayImage,
    target_class: usize,
    layer: Feature,
    snapshot: usize,
) -> Result<HeatMap> {
    let r = model.spec().resolution;
    compute_cam(model, &image.resize(r, r).to_tensor(), target_class, layer, snapshot)
}

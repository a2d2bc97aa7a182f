//! Browser bindings for the static page in `www/`: the cyclic learning-rate
//! schedule, an augmentation preview on toy images and the compound-scaling
//! stage table.
//!
//! Each export wraps a plain function of the same name with an `_impl`
//! suffix so the logic is testable natively.

use ecovnet::arch::{scale_arch, ArchSpec, ScalingCoefficients};
use ecovnet::augment::{apply_affine, sample_affine, AffineParams, AugmentRanges};
use ecovnet::io::toy::toy_image;
use ecovnet::train::{cosine_lr, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Edge length of the preview images.
pub const PREVIEW_SIZE: usize = 96;

fn js(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn schedule_config(total_epochs: u32, cycles: u32, initial_lr: f64) -> Result<TrainConfig, String> {
    let cfg = TrainConfig {
        total_epochs: total_epochs as usize,
        cycles: cycles as usize,
        initial_lr,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Learning rate of every epoch `1..=total_epochs`.
pub fn schedule_curve_impl(total_epochs: u32, cycles: u32, initial_lr: f64) -> Result<Vec<f64>, String> {
    let cfg = schedule_config(total_epochs, cycles, initial_lr)?;
    (1..=cfg.total_epochs)
        .map(|t| cosine_lr(t, &cfg).map_err(|e| e.to_string()))
        .collect()
}

/// Epochs after which a snapshot is saved.
pub fn snapshot_epochs_impl(total_epochs: u32, cycles: u32) -> Result<Vec<u32>, String> {
    let cfg = schedule_config(total_epochs, cycles, 1e-4)?;
    Ok((1..=cfg.total_epochs)
        .filter(|&t| cfg.is_cycle_end(t))
        .map(|t| t as u32)
        .collect())
}

#[wasm_bindgen]
pub fn schedule_curve(total_epochs: u32, cycles: u32, initial_lr: f64) -> Result<Vec<f64>, JsValue> {
    schedule_curve_impl(total_epochs, cycles, initial_lr).map_err(js)
}

#[wasm_bindgen]
pub fn snapshot_epochs(total_epochs: u32, cycles: u32) -> Result<Vec<u32>, JsValue> {
    snapshot_epochs_impl(total_epochs, cycles).map_err(js)
}

/// A toy image of `class` beside its transformed copy, as RGBA bytes of a
/// `2·PREVIEW_SIZE × PREVIEW_SIZE` canvas.
pub fn augmentation_preview_impl(
    class: u32,
    seed: u32,
    rotation_deg: f64,
    shear_deg: f64,
    zoom: f64,
    flip: bool,
) -> Result<Vec<u8>, String> {
    if class > 2 {
        return Err(format!("class {class} outside 0..=2"));
    }
    let params = AffineParams {
        flip,
        rotation_deg,
        shear_deg,
        zoom,
    };
    // Validate through the range checker so the page gets the same errors
    // as a training config would.
    let ranges = AugmentRanges {
        rotation_deg: (rotation_deg, rotation_deg),
        shear_deg: (shear_deg, shear_deg),
        zoom: (zoom, zoom),
        flip_prob: if flip { 1.0 } else { 0.0 },
    };
    ranges.validate().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let original = toy_image(class as usize, PREVIEW_SIZE, &mut rng);
    let augmented = apply_affine(&original, &params);
    let (a, b) = (original.to_u8(), augmented.to_u8());
    let mut rgba = Vec::with_capacity(8 * PREVIEW_SIZE * PREVIEW_SIZE);
    for row in 0..PREVIEW_SIZE {
        let span = row * PREVIEW_SIZE..(row + 1) * PREVIEW_SIZE;
        for &g in a[span.clone()].iter().chain(&b[span]) {
            rgba.extend_from_slice(&[g, g, g, 255]);
        }
    }
    Ok(rgba)
}

/// `[flip, rotation, shear, zoom]` drawn from the default training ranges.
pub fn random_affine_impl(seed: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let p = sample_affine(&AugmentRanges::default(), &mut rng).expect("default ranges are valid");
    vec![f64::from(u8::from(p.flip)), p.rotation_deg, p.shear_deg, p.zoom]
}

#[wasm_bindgen]
pub fn augmentation_preview(
    class: u32,
    seed: u32,
    rotation_deg: f64,
    shear_deg: f64,
    zoom: f64,
    flip: bool,
) -> Result<Vec<u8>, JsValue> {
    augmentation_preview_impl(class, seed, rotation_deg, shear_deg, zoom, flip).map_err(js)
}

#[wasm_bindgen]
pub fn random_affine(seed: u32) -> Vec<f64> {
    random_affine_impl(seed)
}

/// Multipliers, constraint product and the scaled stage table for b0 under
/// `(α, β, γ, φ)`.
pub fn scaling_table_impl(phi: f64, alpha: f64, beta: f64, gamma: f64) -> Result<String, String> {
    let coeffs = ScalingCoefficients::new(alpha, beta, gamma, phi).map_err(|e| e.to_string())?;
    let spec = scale_arch(&ArchSpec::b0(3), coeffs).map_err(|e| e.to_string())?;
    let product = coeffs.constraint_product();
    Ok(format!(
        "depth x{:.4}  width x{:.4}  resolution x{:.4}\nalpha*beta^2*gamma^2 = {product:.4}{}\ninput {}x{}\n\n{spec}",
        coeffs.depth(),
        coeffs.width(),
        coeffs.resolution(),
        if coeffs.constraint_ok() { "" } else { "  (more than 10% from 2)" },
        spec.resolution,
        spec.resolution,
    ))
}

#[wasm_bindgen]
pub fn scaling_table(phi: f64, alpha: f64, beta: f64, gamma: f64) -> Result<String, JsValue> {
    scaling_table_impl(phi, alpha, beta, gamma).map_err(js)
}

//! Synthetic three-class dataset that is separable by construction.
//!
//! * class 0: bright Gaussian blob in the upper-left quadrant
//! * class 1: background noise only
//! * class 2: horizontal bands across the lower half
//!
//! All images share a mid-gray background with Gaussian pixel noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Error, Result};
use crate::image::GrayImage;
use crate::io::image::write_pgm;
use crate::io::manifest::{DatasetManifest, ManifestEntry, DEFAULT_CLASSES};

pub const TOY_BACKGROUND: f64 = 0.3;
pub const TOY_NOISE_SIGMA: f64 = 0.05;
const BLOB_AMPLITUDE: f64 = 0.7;
const BLOB_SIGMA: f64 = 0.14;
const BAND_AMPLITUDE: f64 = 0.35;

/// Renders one toy image of class `label` (0, 1 or 2).
pub fn toy_image<R: Rng + ?Sized>(label: usize, size: usize, rng: &mut R) -> GrayImage {
    let noise = Normal::new(0.0, TOY_NOISE_SIGMA).unwrap();
    let s = size as f64;
    let mut data: Vec<f64> = (0..size * size)
        .map(|_| TOY_BACKGROUND + noise.sample(rng))
        .collect();
    match label {
        0 => {
            let cx = s * rng.random_range(0.22..0.28);
            let cy = s * rng.random_range(0.22..0.28);
            let sigma = BLOB_SIGMA * s;
            for r in 0..size {
                for c in 0..size {
                    let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
                    data[r * size + c] += BLOB_AMPLITUDE * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        2 => {
            let period = (size / 8).max(2);
            let phase = rng.random_range(0..period);
            for r in size / 2..size {
                if ((r + phase) / (period / 2).max(1)) % 2 == 0 {
                    for v in &mut data[r * size..(r + 1) * size] {
                        *v += BAND_AMPLITUDE;
                    }
                }
            }
        }
        _ => {}
    }
    GrayImage::new(size, size, data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()).unwrap()
}

/// Writes `3 · n_per_class` PGM images and `manifest.csv` into `dir`.
/// Output is byte-identical for a given seed.
pub fn generate_toy_dataset(dir: &Path, n_per_class: usize, size: usize, seed: u64) -> Result<DatasetManifest> {
    if n_per_class < 10 {
        return Err(arg_err!("n_per_class must be at least 10, got {n_per_class}"));
    }
    if size < 8 {
        return Err(arg_err!("toy images must be at least 8 pixels wide"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(3 * n_per_class);
    for i in 0..n_per_class {
        for (label, name) in DEFAULT_CLASSES.iter().enumerate() {
            let file = format!("{name}_{i:04}.pgm");
            write_pgm(&dir.join(&file), &toy_image(label, size, &mut rng))?;
            entries.push(ManifestEntry {
                path: PathBuf::from(file),
                label,
            });
        }
    }
    let relative = DatasetManifest {
        classes: DEFAULT_CLASSES.iter().map(|c| c.to_string()).collect(),
        entries,
    };
    let manifest_path = dir.join("manifest.csv");
    fs::write(&manifest_path, relative.to_csv()).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(DatasetManifest {
        entries: relative
            .entries
            .into_iter()
            .map(|e| ManifestEntry {
                path: dir.join(e.path),
                label: e.label,
            })
            .collect(),
        ..relative
    })
}

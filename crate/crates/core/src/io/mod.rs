//! File formats: images, manifests, the toy generator, snapshot containers
//! and run configuration.

pub mod config;
pub mod image;
pub mod manifest;
pub mod snapshot;
pub mod toy;

pub use image::{load_image, read_gray, write_pgm, write_png_gray, write_png_rgb};
pub use manifest::{load_dataset, load_manifest, split_dataset, DatasetManifest, ManifestEntry, DEFAULT_CLASSES};
pub use snapshot::{load_snapshot, save_snapshot};
pub use toy::generate_toy_dataset;

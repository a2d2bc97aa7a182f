//! `path,label` manifests, stratified splitting and dataset loading.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{arg_err, Error, Result};
use crate::image::GrayImage;
use crate::io::image::read_gray;

pub const DEFAULT_CLASSES: [&str; 3] = ["covid19", "normal", "pneumonia"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        for e in &self.entries {
            h[e.label] += 1;
        }
        h
    }

    fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            classes: self.classes.clone(),
            entries,
        }
    }

    /// CSV text with a `path,label` header. Paths are written as stored.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,label\n");
        for e in &self.entries {
            s.push_str(&format!("{},{}\n", e.path.display(), self.classes[e.label]));
        }
        s
    }
}

/// Parses a manifest. Relative image paths are resolved against the
/// manifest's directory and every image must exist.
pub fn load_manifest(path: &Path, classes: &[&str]) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let manifest_err = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "path,label" => {}
        _ => return Err(manifest_err("first line must be the header `path,label`".into())),
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in lines {
        let row = i;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (file, label) = line
            .rsplit_once(',')
            .ok_or_else(|| manifest_err(format!("row {row}: expected `path,label`")))?;
        let (file, label) = (file.trim(), label.trim());
        let label_idx = classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| Error::UnknownLabel {
                path: path.to_path_buf(),
                row,
                label: label.to_string(),
            })?;
        if !seen.insert(file.to_string()) {
            return Err(Error::DuplicatePath {
                path: path.to_path_buf(),
                row,
                entry: file.to_string(),
            });
        }
        let resolved = base.join(file);
        if !resolved.is_file() {
            return Err(manifest_err(format!(
                "row {row}: image {} does not exist",
                resolved.display()
            )));
        }
        entries.push(ManifestEntry {
            path: resolved,
            label: label_idx,
        });
    }
    Ok(DatasetManifest {
        classes: classes.iter().map(|c| c.to_string()).collect(),
        entries,
    })
}

/// Number of validation samples drawn from a class of `n`.
pub fn validation_count(n: usize, val_fraction: f64) -> usize {
    ((n as f64 * val_fraction + 1e-9).floor() as usize).clamp(1, n - 1)
}

/// Stratified train/validation split. Each class contributes
/// `floor(n · val_fraction)` samples (at least one, at most `n − 1`) to the
/// validation side; both sides keep manifest order.
pub fn split_dataset(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(arg_err!("validation fraction {val_fraction} outside (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; manifest.len()];
    for (k, name) in manifest.classes.iter().enumerate() {
        let mut members: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == k)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(arg_err!(
                "class {name:?} has {} samples; at least 2 are needed to split",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        for &i in &members[..validation_count(members.len(), val_fraction)] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .cloned()
        .zip(is_val)
        .partition(|(_, v)| *v);
    Ok((
        manifest.with_entries(train.into_iter().map(|(e, _)| e).collect()),
        manifest.with_entries(val.into_iter().map(|(e, _)| e).collect()),
    ))
}

/// Reads every image of the manifest at `resolution²`, in parallel.
pub fn load_dataset(manifest: &DatasetManifest, resolution: usize) -> Result<Dataset> {
    let n = manifest.len();
    let workers = thread::available_parallelism().map_or(1, |p| p.get()).clamp(1, n.max(1));
    let per = n.div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<GrayImage>>> = thread::scope(|s| {
        let handles: Vec<_> = manifest
            .entries
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|e| Ok(read_gray(&e.path)?.resize(resolution, resolution)))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("image loader panicked")).collect()
    });
    let mut images = Vec::with_capacity(n);
    for p in parts {
        images.extend(p?);
    }
    Dataset::new(
        manifest.classes.clone(),
        images,
        manifest.entries.iter().map(|e| e.label).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_with(counts: &[usize]) -> DatasetManifest {
        let mut entries = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("c{k}/{i}.pgm")),
                    label: k,
                });
            }
        }
        DatasetManifest {
            classes: DEFAULT_CLASSES[..counts.len()].iter().map(|s| s.to_string()).collect(),
            entries,
        }
    }

    #[test]
    fn split_counts_match_reference_table() {
        let m = manifest_with(&[489, 7966, 5459]);
        let (train, val) = split_dataset(&m, 0.1, 7).unwrap();
        assert_eq!(train.histogram(), vec![441, 7170, 4914]);
        assert_eq!(val.histogram(), vec![48, 796, 545]);
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let m = manifest_with(&[100, 100, 100]);
        let (t1, v1) = split_dataset(&m, 0.1, 3).unwrap();
        let (t2, v2) = split_dataset(&m, 0.1, 3).unwrap();
        assert_eq!((&t1, &v1), (&t2, &v2));
        assert_eq!(t1.histogram(), vec![90; 3]);
        assert_eq!(v1.histogram(), vec![10; 3]);
        let mut all: Vec<_> = t1.entries.iter().chain(&v1.entries).map(|e| e.path.clone()).collect();
        all.sort();
        let mut want: Vec<_> = m.entries.iter().map(|e| e.path.clone()).collect();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn split_rejects_singleton_class() {
        assert!(split_dataset(&manifest_with(&[5, 1]), 0.1, 0).is_err());
        assert!(split_dataset(&manifest_with(&[5, 5]), 1.0, 0).is_err());
    }

    fn write_images(dir: &Path, names: &[&str]) {
        for n in names {
            fs::write(dir.join(n), b"P5 1 1 255\n\x00").unwrap();
        }
    }

    #[test]
    fn manifest_parsing_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.pgm", "b.pgm", "c.pgm"]);
        let p = dir.path().join("m.csv");
        fs::write(&p, "path,label\na.pgm,covid19\nb.pgm,normal\nc.pgm,pneumonia\n").unwrap();
        let m = load_manifest(&p, &DEFAULT_CLASSES).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.histogram(), vec![1, 1, 1]);

        fs::write(&p, "path,label\na.pgm,covid19\nb.pgm,covid\n").unwrap();
        assert!(matches!(
            load_manifest(&p, &DEFAULT_CLASSES),
            Err(Error::UnknownLabel { row: 2, .. })
        ));
        fs::write(&p, "path,label\na.pgm,covid19\na.pgm,normal\n").unwrap();
        assert!(matches!(
            load_manifest(&p, &DEFAULT_CLASSES),
            Err(Error::DuplicatePath { row: 2, .. })
        ));
        fs::write(&p, "file,class\na.pgm,covid19\n").unwrap();
        assert!(matches!(load_manifest(&p, &DEFAULT_CLASSES), Err(Error::Manifest { .. })));
        assert!(matches!(
            load_manifest(&dir.path().join("none.csv"), &DEFAULT_CLASSES),
            Err(Error::Io { .. })
        ));
    }
}

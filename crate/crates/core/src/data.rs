//! In-memory labelled image sets and batch assembly.

use rand::Rng;

use crate::augment::{apply_affine, sample_affine, AugmentRanges};
use crate::error::{arg_err, dim_err, Result};
use crate::image::GrayImage;
use crate::tensor::{c, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, images: Vec<GrayImage>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(dim_err!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(arg_err!("label {bad} outside {} classes", classes.len()));
        }
        if let Some(first) = images.first() {
            if images
                .iter()
                .any(|im| im.width != first.width || im.height != first.height)
            {
                return Err(dim_err!("images in a dataset must share one size"));
            }
        }
        Ok(Dataset {
            classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `(width, height)` of the images, if any.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.images.first().map(|im| (im.width, im.height))
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Stacks the selected images into an `N×3×H×W` batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        self.assemble(indices, |im| im.clone())
    }

    /// Like [`Dataset::batch`], with an independently sampled affine
    /// transform applied to every image.
    pub fn augmented_batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        ranges: &AugmentRanges,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let params = indices
            .iter()
            .map(|_| sample_affine(ranges, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut k = 0;
        Ok(self.assemble(indices, |im| {
            let out = apply_affine(im, &params[k]);
            k += 1;
            out
        }))
    }

    fn assemble<T: Scalar>(&self, indices: &[usize], mut f: impl FnMut(&GrayImage) -> GrayImage) -> Tensor<T> {
        let (w, h) = self.image_size().unwrap_or((0, 0));
        let mut data = Vec::with_capacity(indices.len() * 3 * w * h);
        for &i in indices {
            let im = f(&self.images[i]);
            for _ in 0..3 {
                data.extend(im.data.iter().map(|&v| c::<T>(f64::from(v))));
            }
        }
        Tensor::from_vec(&[indices.len(), 3, h, w], data).unwrap()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let im = |v: f32| GrayImage::new(2, 2, vec![v; 4]).unwrap();
        Dataset::new(
            vec!["a".into(), "b".into()],
            vec![im(0.0), im(0.5), im(1.0)],
            vec![0, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn batch_layout() {
        let d = tiny();
        let b = d.batch::<f32>(&[2, 0]);
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert!(b.data()[..12].iter().all(|&v| v == 1.0));
        assert!(b.data()[12..].iter().all(|&v| v == 0.0));
        assert_eq!(d.histogram(), vec![1, 2]);
    }

    #[test]
    fn rejects_bad_labels_and_sizes() {
        let im = GrayImage::zeros(2, 2);
        assert!(Dataset::new(vec!["a".into()], vec![im.clone()], vec![1]).is_err());
        assert!(Dataset::new(
            vec!["a".into()],
            vec![im, GrayImage::zeros(3, 2)],
            vec![0, 0]
        )
        .is_err());
    }
}

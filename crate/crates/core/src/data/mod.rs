//! Dataset ingestion, preprocessing, and seeded batch iteration.

mod augment;
mod cifar;
mod idx;
pub mod synth;

pub use augment::augment_crop_flip;
pub use cifar::{load_cifar10, load_cifar100, save_cifar_batch};
pub use idx::{load_idx, save_idx};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::scalar::Scalar;
use crate::tensor::{Batch, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Immutable image classification dataset, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset<S> {
    pub images: Tensor<S>,
    pub labels: Vec<u16>,
    pub split: Split,
    pub num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        images: Tensor<S>,
        labels: Vec<u16>,
        split: Split,
        num_classes: usize,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Shape(format!(
                "dataset images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            split,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.images.shape()[2], self.images.shape()[3])
    }

    /// First `n` examples, for reduced-scale runs.
    pub fn take(&self, n: usize) -> Dataset<S> {
        let n = n.min(self.len());
        let img_len = self.images.len() / self.len();
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        let images = Tensor::from_vec(&shape, self.images.data()[..n * img_len].to_vec())
            .expect("prefix shape");
        Dataset {
            images,
            labels: self.labels[..n].to_vec(),
            split: self.split,
            num_classes: self.num_classes,
        }
    }

    /// Copy the examples at `indices` into one batch.
    pub fn gather(&self, indices: &[usize]) -> Batch<S> {
        let shape = self.images.shape();
        let img_len = shape[1] * shape[2] * shape[3];
        let mut data = Vec::with_capacity(indices.len() * img_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * img_len..(i + 1) * img_len]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::from_vec(&[indices.len(), shape[1], shape[2], shape[3]], data)
            .expect("gathered shape");
        Batch { images, labels }
    }
}

/// Per-channel normalization constants plus the augmentation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess<S> {
    pub mean: Vec<S>,
    pub std: Vec<S>,
    pub augment: Augment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    None,
    Crop4Flip,
}

impl<S: Scalar> Preprocess<S> {
    pub fn new(mean: Vec<S>, std: Vec<S>, augment: Augment) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Arg("mean/std channel counts differ".into()));
        }
        if std.iter().any(|&s| s <= S::zero()) {
            return Err(Error::Arg("std must be positive".into()));
        }
        Ok(Preprocess { mean, std, augment })
    }

    /// Grayscale convention: mean 0.5, std 0.5, no augmentation.
    pub fn mnist() -> Self {
        Preprocess {
            mean: vec![S::from_f64(0.5)],
            std: vec![S::from_f64(0.5)],
            augment: Augment::None,
        }
    }

    /// CIFAR-10 training-set channel statistics (widely published values),
    /// with the standard pad-4 random crop + horizontal flip.
    pub fn cifar10() -> Self {
        Preprocess {
            mean: [0.4914, 0.4822, 0.4465]
                .iter()
                .map(|&v| S::from_f64(v))
                .collect(),
            std: [0.2470, 0.2435, 0.2616]
                .iter()
                .map(|&v| S::from_f64(v))
                .collect(),
            augment: Augment::Crop4Flip,
        }
    }

    /// (x - mean_c) / std_c per channel, in place.
    pub fn normalize(&self, images: &mut Tensor<S>) {
        let shape = images.shape().to_vec();
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        assert_eq!(c, self.mean.len(), "preprocess channel mismatch");
        let data = images.data_mut();
        for img in 0..n {
            for ch in 0..c {
                let (m, s) = (self.mean[ch], self.std[ch]);
                for v in &mut data[(img * c + ch) * plane..(img * c + ch + 1) * plane] {
                    *v = (*v - m) / s;
                }
            }
        }
    }
}

/// Batches of `batch_size` over a seeded permutation (or natural order);
/// the final short batch is included. Same seed, same order.
pub fn batch_iter<S: Scalar>(
    dataset: &Dataset<S>,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> BatchIter<'_, S> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        let mut rng = rng::substream(seed, stream::SHUFFLE, 0);
        order.shuffle(&mut rng);
    }
    BatchIter {
        dataset,
        order,
        batch_size,
        pos: 0,
    }
}

pub struct BatchIter<'a, S> {
    dataset: &'a Dataset<S>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<S: Scalar> Iterator for BatchIter<'_, S> {
    type Item = Batch<S>;

    fn next(&mut self) -> Option<Batch<S>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

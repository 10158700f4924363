//! Datasets, corruption and randomness.

pub mod cifar;
pub mod image_io;
pub mod noise;
pub mod patches;
pub mod rng;
pub mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_partial, CIFAR_RECORD_BYTES};
pub use image_io::{load_folder, load_image, save_image};
pub use noise::{add_awgn, noisy_batch, NoisyPair};
pub use patches::{resize_bilinear, sample_patches};
pub use rng::Rng;

use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Environment variable naming the dataset root.
pub const DATA_ROOT_ENV: &str = "WIPU_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageSource {
    Cifar10Train,
    Cifar10Test,
    Folder,
}

/// Images in `[0, 1]`, each `(1, 3, H, W)`.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub images: Vec<Tensor>,
    pub names: Vec<String>,
    pub source: ImageSource,
}

impl ImageSet {
    pub fn new(images: Vec<Tensor>, names: Vec<String>, source: ImageSource) -> Result<Self> {
        if images.len() != names.len() {
            return Err(Error::invalid(format!("{} images but {} names", images.len(), names.len())));
        }
        for (img, name) in images.iter().zip(&names) {
            if img.n() != 1 || img.c() != 3 {
                return Err(Error::shape("ImageSet", format!("{name}: expected (1,3,H,W), got {:?}", img.shape())));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("{name}: values outside [0, 1]")));
            }
        }
        Ok(ImageSet { images, names, source })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The first `n` images, order preserved.
    pub fn head(&self, n: usize) -> ImageSet {
        let n = n.min(self.len());
        ImageSet { images: self.images[..n].to_vec(), names: self.names[..n].to_vec(), source: self.source }
    }

    /// Stacks the given images into one `(len, 3, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Tensor::stack(&items)
    }
}

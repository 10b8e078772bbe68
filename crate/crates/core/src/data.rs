//! MNIST (IDX) and CIFAR-10 (binary batch) loaders and mini-batch planning.
//!
//! Expected layouts:
//!
//! ```text
//! mnist/train-images-idx3-ubyte   mnist/train-labels-idx1-ubyte
//! mnist/t10k-images-idx3-ubyte    mnist/t10k-labels-idx1-ubyte
//! cifar/data_batch_{1..5}.bin     cifar/test_batch.bin
//! ```
//!
//! A CIFAR directory may also hold those files one level down in
//! `cifar-10-batches-bin/`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::LoadError;
use crate::tensor::{Scalar, Tensor};

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const MNIST_TRAIN_CAP: usize = 50_000;
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_TRAIN_CAP: usize = 40_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Mnist,
    Cifar10,
}

/// Pixel scaling applied at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `p / 127.5 - 1`, into `[-1, 1]`.
    #[default]
    Symmetric,
    /// `p / 255`, into `[0, 1]`.
    Unit,
}

impl Normalization {
    #[inline]
    pub fn apply(self, p: u8) -> f32 {
        match self {
            Normalization::Symmetric => (p as f64 / 127.5 - 1.0) as f32,
            Normalization::Unit => (p as f64 / 255.0) as f32,
        }
    }
}

/// Images `[count, channels, h, w]` with labels in `0..=9`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

/// A mini-batch ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(channels, height, width)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    fn image_len(&self) -> usize {
        let (c, h, w) = self.image_shape();
        c * h * w
    }

    /// The first `cap` examples (all of them when `cap` is larger).
    pub fn truncated(&self, cap: usize) -> Dataset {
        if cap >= self.len() {
            return self.clone();
        }
        let (c, h, w) = self.image_shape();
        Dataset {
            images: Tensor::from_parts(vec![cap, c, h, w], self.images.data()[..cap * c * h * w].to_vec()),
            labels: self.labels[..cap].to_vec(),
            provenance: self.provenance,
        }
    }

    /// Gathers the examples at `indices` into a batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let (c, h, w) = self.image_shape();
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.images.data()[i * n..(i + 1) * n].iter().map(|&v| T::of_f64(v as f64)));
        }
        Batch {
            inputs: Tensor::from_parts(vec![indices.len(), c, h, w], data),
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, LoadError> {
    fs::read(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn need(bytes: &[u8], needed: usize, path: &Path) -> Result<(), LoadError> {
    if bytes.len() < needed {
        return Err(LoadError::Truncated {
            path: path.display().to_string(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), LoadError> {
    need(bytes, 4, path)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(LoadError::Magic {
            path: path.display().to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an IDX3 image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, usize, &'a [u8]), LoadError> {
    check_magic(bytes, MNIST_IMAGE_MAGIC, path)?;
    need(bytes, 16, path)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let body = count * rows * cols;
    need(bytes, 16 + body, path)?;
    Ok((count, rows, cols, &bytes[16..16 + body]))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8], LoadError> {
    check_magic(bytes, MNIST_LABEL_MAGIC, path)?;
    need(bytes, 8, path)?;
    let count = be_u32(bytes, 4) as usize;
    need(bytes, 8 + count, path)?;
    let labels = &bytes[8..8 + count];
    if let Some(index) = labels.iter().position(|&l| l > 9) {
        return Err(LoadError::Label {
            path: path.display().to_string(),
            index,
            label: labels[index],
        });
    }
    Ok(labels)
}

fn load_mnist_split(dir: &Path, prefix: &str, norm: Normalization) -> Result<Dataset, LoadError> {
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let img_bytes = read(&img_path)?;
    let lbl_bytes = read(&lbl_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&img_bytes, &img_path)?;
    if (rows, cols) != (28, 28) {
        return Err(LoadError::Dimensions {
            path: img_path.display().to_string(),
            rows,
            cols,
        });
    }
    let labels = parse_idx_labels(&lbl_bytes, &lbl_path)?;
    if labels.len() != count {
        return Err(LoadError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if count == 0 {
        return Err(LoadError::Truncated {
            path: img_path.display().to_string(),
            needed: 16 + rows * cols,
            found: img_bytes.len(),
        });
    }
    Ok(Dataset {
        images: Tensor::from_parts(vec![count, 1, rows, cols], pixels.iter().map(|&p| norm.apply(p)).collect()),
        labels: labels.to_vec(),
        provenance: Provenance::Mnist,
    })
}

/// Loads MNIST with the default `[-1, 1]` scaling, training split capped at
/// 50,000 images.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), LoadError> {
    load_mnist_with(dir, Normalization::default())
}

pub fn load_mnist_with(dir: impl AsRef<Path>, norm: Normalization) -> Result<(Dataset, Dataset), LoadError> {
    let dir = dir.as_ref();
    let train = load_mnist_split(dir, "train", norm)?.truncated(MNIST_TRAIN_CAP);
    let test = load_mnist_split(dir, "t10k", norm)?;
    Ok((train, test))
}

/// Parses concatenated 3073-byte CIFAR-10 records (label byte, then 1024
/// bytes each of the R, G and B planes).
pub fn parse_cifar_records(bytes: &[u8], path: &Path, norm: Normalization) -> Result<(Vec<f32>, Vec<u8>), LoadError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(LoadError::RecordLength {
            path: path.display().to_string(),
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(LoadError::Label {
                path: path.display().to_string(),
                index,
                label: rec[0],
            });
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&p| norm.apply(p)));
    }
    Ok((images, labels))
}

fn cifar_root(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join("test_batch.bin").exists() && nested.join("test_batch.bin").exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_cifar_files(paths: &[PathBuf], norm: Normalization, cap: usize) -> Result<Dataset, LoadError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        if labels.len() >= cap {
            break;
        }
        let (img, lbl) = parse_cifar_records(&read(path)?, path, norm)?;
        images.extend(img);
        labels.extend(lbl);
    }
    let count = labels.len().min(cap);
    images.truncate(count * (CIFAR_RECORD - 1));
    labels.truncate(count);
    Ok(Dataset {
        images: Tensor::from_parts(vec![count, 3, 32, 32], images),
        labels,
        provenance: Provenance::Cifar10,
    })
}

/// Loads CIFAR-10: training from `data_batch_1..5.bin` capped at 40,000
/// images, test from `test_batch.bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), LoadError> {
    load_cifar10_with(dir, Normalization::default())
}

pub fn load_cifar10_with(dir: impl AsRef<Path>, norm: Normalization) -> Result<(Dataset, Dataset), LoadError> {
    let root = cifar_root(dir.as_ref());
    let train_paths: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
    let train = load_cifar_files(&train_paths, norm, CIFAR_TRAIN_CAP)?;
    let test = load_cifar_files(&[root.join("test_batch.bin")], norm, usize::MAX)?;
    Ok((train, test))
}

/// Shuffled mini-batch schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            batch_size: 200,
            seed: 0,
        }
    }
}

impl BatchPlan {
    /// Index lists for one epoch over `n` examples: a seeded permutation cut
    /// into `batch_size` pieces, the last one possibly shorter.
    pub fn epoch(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let mixed = self.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
        order.chunks(self.batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

pub fn batches(dataset: &Dataset, plan: &BatchPlan, epoch: usize) -> Vec<Vec<usize>> {
    plan.epoch(dataset.len(), epoch)
}

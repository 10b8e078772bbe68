#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bitreg::data::{Batch, Dataset, Provenance};
use bitreg::net::{init_network, LayerSpec, Network, NetworkConfig};
use bitreg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// conv 4@3x3 pool 2 -> dense 8 -> classify 3 on 1x6x6 inputs.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig::new(
        (1, 6, 6),
        vec![LayerSpec::conv(4, 3, 2), LayerSpec::dense(8), LayerSpec::classify(3)],
    )
    .unwrap()
}

pub fn tiny_net(seed: u64, bits: u32) -> Network<f64> {
    init_network(&tiny_config(), seed, bits).unwrap()
}

pub fn random_batch(n: usize, shape: (usize, usize, usize), classes: usize, seed: u64) -> Batch<f64> {
    let mut r = rng(seed);
    let (c, h, w) = shape;
    Batch {
        inputs: Tensor::from_fn(&[n, c, h, w], |_| r.gen_range(-1.0..1.0)),
        labels: (0..n).map(|_| r.gen_range(0..classes)).collect(),
    }
}

pub fn random_dataset(n: usize, shape: (usize, usize, usize), seed: u64) -> Dataset {
    let mut r = rng(seed);
    let (c, h, w) = shape;
    Dataset {
        images: Tensor::from_fn(&[n, c, h, w], |_| r.gen_range(-1.0f32..1.0)),
        labels: (0..n).map(|_| r.gen_range(0..10u8)).collect(),
        provenance: Provenance::Mnist,
    }
}

pub fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = 0x0000_0803u32.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        v.extend_from_slice(&d.to_be_bytes());
    }
    v.extend_from_slice(pixels);
    v
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = 0x0000_0801u32.to_be_bytes().to_vec();
    v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    v.extend_from_slice(labels);
    v
}

/// One CIFAR record whose R, G and B planes are filled with `r`, `g`, `b`.
pub fn cifar_record(label: u8, r: u8, g: u8, b: u8) -> Vec<u8> {
    let mut v = vec![label];
    for p in [r, g, b] {
        v.extend(std::iter::repeat_n(p, 1024));
    }
    v
}

/// Two 28x28 MNIST images: the first all zero except pixel (0, 1) = 255,
/// the second a constant 51.
pub fn write_mnist_fixture(dir: &Path, split: &str) {
    let mut pixels = vec![0u8; 2 * 784];
    pixels[1] = 255;
    pixels[784..].fill(51);
    std::fs::write(dir.join(format!("{split}-images-idx3-ubyte")), idx_images(2, 28, 28, &pixels)).unwrap();
    std::fs::write(dir.join(format!("{split}-labels-idx1-ubyte")), idx_labels(&[7, 3])).unwrap();
}

/// Directory with the real MNIST files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("BITREG_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

use bitreg::kernels::softmax_cross_entropy;
use bitreg::net::WeightSource;

/// Mean NLL of `net` on `batch` with high-precision parameters.
pub fn nll(net: &Network<f64>, batch: &Batch<f64>) -> f64 {
    let (logits, _) = net.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
    softmax_cross_entropy(&logits, &batch.labels).unwrap().0
}

/// Largest relative disagreement between backprop and central differences
/// over every parameter. Denominators are floored at `1e-6`.
pub fn finite_difference_error(net: &Network<f64>, batch: &Batch<f64>) -> f64 {
    let (logits, caches) = net.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
    let (_, grad_logits) = softmax_cross_entropy(&logits, &batch.labels).unwrap();
    let grads = net.backward(&caches, &grad_logits).unwrap();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (layer, grad) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe.layers()[layer].params.data()[j];
            probe.layers_mut()[layer].params.data_mut()[j] = orig + h;
            let up = nll(&probe, batch);
            probe.layers_mut()[layer].params.data_mut()[j] = orig - h;
            let down = nll(&probe, batch);
            probe.layers_mut()[layer].params.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.data()[j];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

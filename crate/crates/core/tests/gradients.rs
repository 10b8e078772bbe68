mod common;

use bitreg::kernels::softmax_cross_entropy;
use bitreg::net::WeightSource;
use bitreg::Tensor;
use common::*;

#[test]
fn whole_network_matches_finite_differences() {
    for seed in 0..3 {
        let net = tiny_net(seed, 8);
        let batch = random_batch(5, (1, 6, 6), 3, 100 + seed);
        let err = finite_difference_error(&net, &batch);
        assert!(err <= 1e-5, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn batch_gradient_is_size_weighted_mean() {
    let net = tiny_net(1, 8);
    let all = random_batch(7, (1, 6, 6), 3, 5);
    let split = |range: std::ops::Range<usize>| bitreg::data::Batch {
        inputs: Tensor::new(
            vec![range.len(), 1, 6, 6],
            all.inputs.data()[range.start * 36..range.end * 36].to_vec(),
        )
        .unwrap(),
        labels: all.labels[range].to_vec(),
    };
    let grads = |b: &bitreg::data::Batch<f64>| {
        let (logits, caches) = net.forward(&b.inputs, WeightSource::HighPrecision).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &b.labels).unwrap();
        net.backward(&caches, &g).unwrap()
    };
    let whole = grads(&all);
    let (a, b) = (grads(&split(0..3)), grads(&split(3..7)));
    for ((w, a), b) in whole.iter().zip(&a).zip(&b) {
        for ((&w, &a), &b) in w.data().iter().zip(a.data()).zip(b.data()) {
            assert!((w * 7.0 - (a * 3.0 + b * 4.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn quantized_forward_uses_grid_values() {
    let net = tiny_net(2, 2);
    let batch = random_batch(4, (1, 6, 6), 3, 9);
    let (hp, _) = net.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
    let (q, _) = net.forward(&batch.inputs, WeightSource::Quantized).unwrap();
    assert_ne!(hp, q);
    let mut snapped = net.clone();
    for layer in snapped.layers_mut() {
        layer.params = bitreg::quantize::reconstruct(&layer.q);
    }
    let (s, _) = snapped.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
    assert_eq!(s, q);
}

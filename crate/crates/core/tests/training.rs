mod common;

use bitreg::kernels::softmax_cross_entropy;
use bitreg::net::{evaluate, init_network, NetworkConfig, WeightSource};
use bitreg::optim::{train_step, LrSchedule, RegularizerConfig, StepConfig};
use common::*;

fn plain_sgd(schedule: LrSchedule) -> StepConfig {
    StepConfig {
        reg: RegularizerConfig::none(),
        schedule,
        learn_bits: false,
        project: false,
        train_source: WeightSource::HighPrecision,
    }
}

#[test]
fn unregularized_trainer_is_plain_sgd() {
    let schedule = LrSchedule { mu0: 0.05, halve_every: 30 };
    let cfg = plain_sgd(schedule);
    let mut trained = tiny_net(3, 8);
    let mut reference = trained.clone();
    for it in 0..100 {
        let batch = random_batch(6, (1, 6, 6), 3, it as u64);
        train_step(&mut trained, &batch, it, &cfg).unwrap();

        let mu = 0.05 * 0.5f64.powi((it / 30) as i32);
        let (logits, caches) = reference.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &batch.labels).unwrap();
        let grads = reference.backward(&caches, &g).unwrap();
        for (layer, grad) in reference.layers_mut().iter_mut().zip(&grads) {
            for (w, &g) in layer.params.data_mut().iter_mut().zip(grad.data()) {
                *w -= mu * g;
            }
        }
        for (a, b) in trained.layers().iter().zip(reference.layers()) {
            assert_eq!(a.params, b.params, "iteration {it}");
        }
    }
}

#[test]
fn bit_penalty_alone_drives_bits_to_one() {
    let cfg = StepConfig {
        reg: RegularizerConfig { lambda1: 0.0, lambda2: 1.0, ..RegularizerConfig::default() },
        ..StepConfig::default()
    };
    let mut net = tiny_net(4, 8);
    for it in 0..20 {
        let rec = train_step(&mut net, &random_batch(4, (1, 6, 6), 3, it as u64), it, &cfg).unwrap();
        let expected = 8u32.saturating_sub(it as u32 + 1).max(1);
        assert!(rec.bits.iter().all(|&b| b == expected), "iteration {it}: {:?}", rec.bits);
    }
}

#[test]
fn projection_invariant_holds_after_every_step() {
    let cfg = StepConfig::default();
    let mut net = tiny_net(5, 4);
    for it in 0..30 {
        train_step(&mut net, &random_batch(8, (1, 6, 6), 3, it as u64), it, &cfg).unwrap();
        for layer in net.layers() {
            let fresh = bitreg::quantize::quantize_uniform(&layer.params, layer.bits).unwrap();
            assert_eq!(layer.q, fresh);
            assert!((1..=32).contains(&layer.bits));
        }
    }
}

#[test]
fn untrained_network_is_near_chance() {
    let cfg = NetworkConfig::preset("lenet-mnist").unwrap();
    let net = init_network::<f64>(&cfg, 11, 8).unwrap();
    let batch = random_batch(200, (1, 28, 28), 10, 12);
    let loss = nll(&net, &batch);
    assert!((loss - 10f64.ln()).abs() < 0.15, "{loss}");

    let data = random_dataset(1000, (1, 28, 28), 13);
    let err = evaluate(&init_network::<f32>(&cfg, 14, 8).unwrap(), &data, WeightSource::Quantized, 250).unwrap();
    assert!((err - 90.0).abs() <= 3.0, "{err}");
}

#[test]
fn evaluate_counts_mismatches() {
    let net = tiny_net(6, 8);
    let mut data = random_dataset(40, (1, 6, 6), 7);
    let batch = data.batch::<f64>(&(0..40).collect::<Vec<_>>());
    let (logits, _) = net.forward(&batch.inputs, WeightSource::HighPrecision).unwrap();
    let predicted = bitreg::net::argmax_rows(&logits);
    data.labels = predicted.iter().map(|&p| p as u8).collect();
    let net32 = init_network::<f64>(net.config(), 6, 8).unwrap();
    assert_eq!(evaluate(&net32, &data, WeightSource::HighPrecision, 16).unwrap(), 0.0);
    for l in data.labels.iter_mut().take(10) {
        *l = (*l + 1) % 3;
    }
    assert_eq!(evaluate(&net32, &data, WeightSource::HighPrecision, 16).unwrap(), 25.0);
}

#[test]
fn non_finite_loss_names_the_iteration() {
    let cfg = plain_sgd(LrSchedule { mu0: 0.1, halve_every: 1000 });
    let mut net = tiny_net(8, 8);
    net.layers_mut()[2].params.data_mut()[0] = f64::INFINITY;
    let err = train_step(&mut net, &random_batch(4, (1, 6, 6), 3, 0), 7, &cfg).unwrap_err();
    assert!(matches!(err, bitreg::Error::Diverged { iteration: 7 }), "{err}");
    assert!(err.to_string().contains('7'), "{err}");
}

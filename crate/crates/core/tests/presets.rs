use bitreg::net::{NetworkConfig, PRESETS};

// (preset, reference size, unit of its last printed digit)
const TABLE: [(&str, f64, f64); 10] = [
    ("mnist-depth-4", 268e3, 1e3),
    ("mnist-depth-5", 165e3, 1e3),
    ("mnist-depth-6", 173e3, 1e3),
    ("mnist-depth-7", 181e3, 1e3),
    ("mnist-depth-8", 431e3, 1e3),
    ("cifar-depth-4", 2.0e6, 0.1e6),
    ("cifar-depth-5", 666e3, 1e3),
    ("cifar-depth-6", 949e3, 1e3),
    ("cifar-depth-7", 957e3, 1e3),
    ("cifar-depth-8", 1.2e6, 0.1e6),
];

#[test]
fn depth_presets_match_reference_sizes() {
    for (name, table, unit) in TABLE {
        let count = NetworkConfig::preset(name).unwrap().param_count().unwrap() as f64;
        let tol = (0.01 * table).max(unit);
        assert!((count - table).abs() <= tol, "{name}: {count} vs {table}");
    }
}

#[test]
fn depth_presets_have_their_layer_count() {
    for (name, _, _) in TABLE {
        let depth: usize = name.rsplit('-').next().unwrap().parse().unwrap();
        assert_eq!(NetworkConfig::preset(name).unwrap().layers.len(), depth, "{name}");
    }
}

#[test]
fn every_preset_round_trips_through_text() {
    for name in PRESETS {
        let cfg = NetworkConfig::preset(name).unwrap();
        let again: NetworkConfig = cfg.to_string().parse().unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(again.param_count().unwrap(), cfg.param_count().unwrap());
    }
}

#[test]
fn lenet_cifar_shapes() {
    let cfg = NetworkConfig::preset("lenet-cifar").unwrap();
    let shapes = cfg.shapes().unwrap();
    assert_eq!(shapes[0], vec![256, 15, 15]);
    assert_eq!(shapes[1], vec![512, 6, 6]);
    assert_eq!(cfg.layer_param_counts().unwrap()[2], 512 * 36 * 1024 + 1024);
}

use std::path::Path;
use std::process::{Command, Output};

fn bitreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitreg")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend_from_slice(&d.to_be_bytes());
    }
    v.extend_from_slice(body);
    v
}

/// Tiny MNIST-shaped data set: label `i % 3`, one bright row per class.
fn write_data(dir: &Path, n: u32) {
    for split in ["train", "t10k"] {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 3) as u8;
            let mut img = vec![0u8; 784];
            let row = 4 + 8 * label as usize;
            img[row * 28..row * 28 + 28].fill(255);
            img[(i as usize * 37) % 784] = 128;
            pixels.extend(img);
            labels.push(label);
        }
        std::fs::write(dir.join(format!("{split}-images-idx3-ubyte")), idx(0x803, &[n, 28, 28], &pixels)).unwrap();
        std::fs::write(dir.join(format!("{split}-labels-idx1-ubyte")), idx(0x801, &[n], &labels)).unwrap();
    }
}

fn write_arch(dir: &Path) -> String {
    let path = dir.join("small.arch");
    std::fs::write(&path, "# small test net\ninput 1x28x28\nconv 2 5x5 pool 4x4\ndense 8\nclassify 10\n").unwrap();
    path.display().to_string()
}

fn train_args<'a>(data: &'a str, arch: &'a str) -> Vec<&'a str> {
    vec![
        "train", "--data-dir", data, "--arch", arch, "--epochs", "2", "--batch-size", "10", "--mu0", "0.05", "-q",
    ]
}

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 30);
    let arch = write_arch(dir.path());
    let data = dir.path().display().to_string();
    let metrics = dir.path().join("m.csv").display().to_string();
    let model = dir.path().join("m.btq").display().to_string();

    let mut args = train_args(&data, &arch);
    args.extend(["--metrics", &metrics, "--model", &model]);
    let out = bitreg(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let trained = text.lines().find(|l| l.starts_with("test error")).unwrap().to_string();
    assert!(text.contains("compression"), "{text}");

    let csv = std::fs::read_to_string(&metrics).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "epoch,iteration,mu,train_nll,test_error,compression,bits_1,bits_2,bits_3,qerr_1,qerr_2,qerr_3"
    );
    // iterations 1..6, logging every 10: epoch rows only
    assert_eq!(csv.lines().count(), 3);

    let out = bitreg(&["eval", "--data-dir", &data, "--model", &model]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), trained);
}

#[test]
fn identical_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 20);
    let arch = write_arch(dir.path());
    let data = dir.path().display().to_string();
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name).display().to_string();
        let mut args = train_args(&data, &arch);
        args.extend(["--metrics", &path, "--log-every", "1", "--seed", "4"]);
        assert!(bitreg(&args).status.success());
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 20);
    let arch = write_arch(dir.path());
    let data = dir.path().display().to_string();
    let summary = dir.path().join("s.csv").display().to_string();
    let out = bitreg(&[
        "sweep", "--data-dir", &data, "--arch", &arch, "--epochs", "1", "--batch-size", "10", "-q",
        "--lambda1s", "1e-4,1e-3", "--lambda2s", "1e-7,1e-6,1e-5", "--summary", &summary,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "lambda1,lambda2,test_error,mean_bits,compression");
    assert_eq!(csv.lines().count(), 7);
}

fn assert_one_line_failure(out: &Output, needle: &str) {
    assert_eq!(out.status.code(), Some(1), "{}", stderr(out));
    let err = stderr(out);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains(needle), "{err}");
}

#[test]
fn corrupt_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 5);
    let model = dir.path().join("bad.btq");
    std::fs::write(&model, b"BTQ1\x01\0\0\0\xff\xff").unwrap();
    let out = bitreg(&[
        "eval", "--data-dir", &dir.path().display().to_string(), "--model", &model.display().to_string(),
    ]);
    assert_one_line_failure(&out, "truncated");
}

#[test]
fn missing_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bitreg(&["train", "--data-dir", &dir.path().display().to_string(), "-q"]);
    assert_one_line_failure(&out, "train-images-idx3-ubyte");
}

#[test]
fn unknown_architecture_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path(), 5);
    let out = bitreg(&["train", "--data-dir", &dir.path().display().to_string(), "--arch", "lenet-9000", "-q"]);
    assert_one_line_failure(&out, "lenet-9000");
}

#[test]
fn bad_method_is_a_usage_error() {
    let out = bitreg(&["train", "--method", "bayes-8"]);
    assert_one_line_failure(&out, "bayes-8");
    assert!(bitreg(&["--help"]).status.success());
}

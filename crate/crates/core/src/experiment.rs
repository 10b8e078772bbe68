//! Training, evaluation and sweep runs as used by the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{load_cifar10_with, load_mnist_with, BatchPlan, Dataset, Normalization, Provenance};
use crate::error::{Error, Result};
use crate::modelfmt::{compression_ratio, load_packed_file, save_packed, write_metrics, TrainRecord};
use crate::net::{evaluate, init_network, Network, NetworkConfig, WeightSource};
use crate::optim::{baseline_epoch_quantize, train_step, LrSchedule, Penalty, RegularizerConfig, StepConfig};
use crate::quantize::{QuantizerKind, MAX_BITS};
use crate::tensor::Scalar;

/// Which trainer a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Bit-regularized training with learned per-layer bit-widths.
    BitNet,
    /// Unregularized reference at 32 bits.
    LeNet32,
    /// Unregularized training, uniform `n`-bit quantization after each epoch.
    Linear(u32),
    /// Unregularized training, `n`-bit k-means quantization after each epoch.
    KMeans(u32),
}

impl Method {
    /// Parameters the method is scored on.
    pub fn eval_source(self) -> WeightSource {
        match self {
            Method::BitNet => WeightSource::Quantized,
            _ => WeightSource::HighPrecision,
        }
    }

    fn quantizer(self) -> Option<(QuantizerKind, u32)> {
        match self {
            Method::Linear(n) => Some((QuantizerKind::Uniform, n)),
            Method::KMeans(n) => Some((QuantizerKind::KMeans, n)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::BitNet => f.write_str("bitnet"),
            Method::LeNet32 => f.write_str("lenet32"),
            Method::Linear(n) => write!(f, "linear-{n}"),
            Method::KMeans(n) => write!(f, "kmeans-{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = |n: &str| -> Result<u32> {
            match n.parse::<u32>() {
                Ok(b) if (1..=MAX_BITS).contains(&b) => Ok(b),
                _ => Err(Error::Config(format!("bad bit-width in method '{s}'"))),
            }
        };
        match s.to_ascii_lowercase().as_str() {
            "bitnet" => Ok(Method::BitNet),
            "lenet32" => Ok(Method::LeNet32),
            other => {
                if let Some(n) = other.strip_prefix("linear-") {
                    Ok(Method::Linear(bits(n)?))
                } else if let Some(n) = other.strip_prefix("kmeans-") {
                    Ok(Method::KMeans(bits(n)?))
                } else {
                    Err(Error::Config(format!(
                        "unknown method '{s}' (expected bitnet, lenet32, linear-N or kmeans-N)"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision '{s}' (expected 32 or 64)"))),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Provenance::Mnist),
            "cifar10" | "cifar-10" | "cifar" => Ok(Provenance::Cifar10),
            _ => Err(Error::Config(format!("unknown dataset '{s}' (expected mnist or cifar10)"))),
        }
    }
}

impl FromStr for Penalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(Penalty::Exponential),
            "linear" => Ok(Penalty::Linear),
            _ => Err(Error::Config(format!("unknown penalty '{s}' (expected exponential or linear)"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Provenance,
    pub data_dir: PathBuf,
    /// Preset name or path to an architecture file.
    pub arch: String,
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub mu0: f64,
    pub halve_every: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub penalty: Penalty,
    pub bits_init: u32,
    pub seed: u64,
    pub train_cap: Option<usize>,
    pub test_cap: Option<usize>,
    /// Emit a record every this many iterations (0 = epoch rows only).
    pub log_every: usize,
    pub metrics: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub precision: Precision,
    pub normalization: Normalization,
    pub epsilon: f64,
    pub exact_derivatives: bool,
    pub train_source: WeightSource,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let reg = RegularizerConfig::default();
        let schedule = LrSchedule::default();
        RunConfig {
            dataset: Provenance::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            arch: "lenet-mnist".into(),
            method: Method::BitNet,
            epochs: 10,
            batch_size: BatchPlan::default().batch_size,
            mu0: schedule.mu0,
            halve_every: schedule.halve_every,
            lambda1: reg.lambda1,
            lambda2: reg.lambda2,
            penalty: reg.penalty,
            bits_init: 8,
            seed: 0,
            train_cap: None,
            test_cap: None,
            log_every: 10,
            metrics: None,
            model: None,
            precision: Precision::F32,
            normalization: Normalization::default(),
            epsilon: reg.epsilon,
            exact_derivatives: reg.exact_derivatives,
            train_source: WeightSource::HighPrecision,
            verbose: false,
        }
    }
}

impl RunConfig {
    /// Optimizer settings implied by the method.
    pub fn step_config(&self) -> StepConfig {
        let reg = match self.method {
            Method::BitNet => RegularizerConfig {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                penalty: self.penalty,
                epsilon: self.epsilon,
                exact_derivatives: self.exact_derivatives,
                ..RegularizerConfig::default()
            },
            _ => RegularizerConfig::none(),
        };
        StepConfig {
            reg,
            schedule: LrSchedule {
                mu0: self.mu0,
                halve_every: self.halve_every,
            },
            learn_bits: self.method == Method::BitNet,
            project: true,
            train_source: self.train_source,
        }
    }

    /// Starting bit-width of every layer.
    pub fn initial_bits(&self) -> u32 {
        match self.method {
            Method::BitNet => self.bits_init,
            _ => MAX_BITS,
        }
    }

    pub fn network_config(&self) -> Result<NetworkConfig> {
        NetworkConfig::from_name_or_file(&self.arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        self.step_config().reg.validate()?;
        self.step_config().schedule.validate()?;
        crate::quantize::check_bits(self.initial_bits())
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<TrainRecord>,
    /// Test error (%) after the last epoch.
    pub test_error: f64,
    pub bits: Vec<u32>,
    pub mean_bits: f64,
    pub compression: f64,
    /// The packed final model.
    pub model: Vec<u8>,
}

/// Loads the configured dataset and applies the subset caps.
pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = match cfg.dataset {
        Provenance::Mnist => load_mnist_with(&cfg.data_dir, cfg.normalization)?,
        Provenance::Cifar10 => load_cifar10_with(&cfg.data_dir, cfg.normalization)?,
    };
    let cap = |d: Dataset, c: Option<usize>| match c {
        Some(c) => d.truncated(c),
        None => d,
    };
    Ok((cap(train, cfg.train_cap), cap(test, cfg.test_cap)))
}

fn check_input(arch: &NetworkConfig, data: &Dataset) -> Result<()> {
    if arch.input != data.image_shape() {
        let (c, h, w) = arch.input;
        let (dc, dh, dw) = data.image_shape();
        return Err(Error::Config(format!(
            "architecture expects {c}x{h}x{w} inputs, dataset has {dc}x{dh}x{dw}"
        )));
    }
    Ok(())
}

/// Trains on already loaded data and returns the final network with the
/// metrics log. Test error is measured after every epoch.
pub fn train_network<T: Scalar>(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Network<T>, Vec<TrainRecord>)> {
    cfg.validate()?;
    let arch = cfg.network_config()?;
    check_input(&arch, train)?;
    check_input(&arch, test)?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut net = init_network::<T>(&arch, cfg.seed, cfg.initial_bits())?;
    let step = cfg.step_config();
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };

    let mut records = Vec::new();
    let mut iteration = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut nll_sum = 0.0;
        let mut last = None;
        let batches = plan.epoch(train.len(), epoch - 1);
        let n_batches = batches.len();
        for indices in batches {
            let batch = train.batch::<T>(&indices);
            let rec = train_step(&mut net, &batch, iteration, &step)?;
            iteration += 1;
            nll_sum += rec.nll;
            let logged = cfg.log_every > 0 && iteration.is_multiple_of(cfg.log_every);
            if logged && !iteration.is_multiple_of(n_batches) {
                let bits = rec.bits.clone();
                records.push(TrainRecord {
                    epoch,
                    iteration,
                    mu: rec.mu,
                    train_nll: rec.nll,
                    test_error: None,
                    compression: compression_ratio(&bits),
                    bits,
                    quant_errors: rec.quant_errors.clone(),
                });
            }
            last = Some(rec);
        }
        if let Some((kind, n)) = cfg.method.quantizer() {
            baseline_epoch_quantize(&mut net, kind, n)?;
        }
        let test_error = evaluate(&net, test, cfg.method.eval_source(), cfg.batch_size)?;
        let last = last.expect("at least one batch per epoch");
        let bits = net.bits();
        let quant_errors = net
            .layers()
            .iter()
            .map(|l| crate::quantize::quant_error(&l.params, &l.q))
            .collect::<Result<Vec<_>>>()?;
        if cfg.verbose {
            eprintln!(
                "epoch {epoch:>3}  iter {iteration:>6}  nll {:.4}  test error {test_error:.2}%  bits {bits:?}",
                nll_sum / n_batches as f64
            );
        }
        records.push(TrainRecord {
            epoch,
            iteration,
            mu: last.mu,
            train_nll: nll_sum / n_batches as f64,
            test_error: Some(test_error),
            compression: compression_ratio(&bits),
            bits,
            quant_errors,
        });
    }
    Ok((net, records))
}

fn summarize<T: Scalar>(net: &Network<T>, records: Vec<TrainRecord>) -> RunOutcome {
    let bits = net.bits();
    let mean_bits = bits.iter().map(|&b| b as f64).sum::<f64>() / bits.len() as f64;
    let test_error = records
        .iter()
        .rev()
        .find_map(|r| r.test_error)
        .unwrap_or(f64::NAN);
    RunOutcome {
        records,
        test_error,
        compression: compression_ratio(&bits),
        mean_bits,
        bits,
        model: save_packed(net),
    }
}

/// Trains on pre-loaded data at the configured precision, without writing
/// any files.
pub fn run_on(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    match cfg.precision {
        Precision::F32 => {
            let (net, records) = train_network::<f32>(cfg, train, test)?;
            Ok(summarize(&net, records))
        }
        Precision::F64 => {
            let (net, records) = train_network::<f64>(cfg, train, test)?;
            Ok(summarize(&net, records))
        }
    }
}

/// Full training command: load data, train, write the metrics CSV and the
/// packed model when paths are configured.
pub fn run_train(cfg: &RunConfig) -> Result<RunOutcome> {
    let (train, test) = load_data(cfg)?;
    let outcome = run_on(cfg, &train, &test)?;
    if let Some(path) = &cfg.metrics {
        write_metrics(&outcome.records, path)?;
    }
    if let Some(path) = &cfg.model {
        std::fs::write(path, &outcome.model).map_err(Error::file(path))?;
    }
    Ok(outcome)
}

/// Test error (%) of a packed model evaluated on its grid reconstructions.
pub fn eval_model<T: Scalar>(model: &Path, test: &Dataset, chunk: usize) -> Result<f64> {
    let net: Network<T> = load_packed_file(model)?;
    check_input(net.config(), test)?;
    evaluate(&net, test, WeightSource::Quantized, chunk)
}

/// Evaluation command: loads the configured test split and the model.
pub fn run_eval(cfg: &RunConfig, model: &Path) -> Result<f64> {
    // fail on a bad model before touching the data
    let bytes = std::fs::read(model).map_err(Error::file(model))?;
    crate::modelfmt::PackedModel::decode(&bytes)?;
    let (_, test) = load_data(cfg)?;
    match cfg.precision {
        Precision::F32 => eval_model::<f32>(model, &test, cfg.batch_size),
        Precision::F64 => eval_model::<f64>(model, &test, cfg.batch_size),
    }
}

/// One cell of a λ1 × λ2 sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub test_error: f64,
    pub mean_bits: f64,
    pub compression: f64,
}

/// Trains one run per (λ1, λ2) pair, row-major over `lambda1s`, on data
/// loaded once. The base config's file outputs are ignored.
pub fn sweep_on(
    base: &RunConfig,
    lambda1s: &[f64],
    lambda2s: &[f64],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<SweepCell>> {
    if lambda1s.is_empty() || lambda2s.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut cells = Vec::with_capacity(lambda1s.len() * lambda2s.len());
    for &lambda1 in lambda1s {
        for &lambda2 in lambda2s {
            let cfg = RunConfig {
                lambda1,
                lambda2,
                metrics: None,
                model: None,
                ..base.clone()
            };
            let out = run_on(&cfg, train, test)?;
            if base.verbose {
                eprintln!(
                    "lambda1 {lambda1:e} lambda2 {lambda2:e}: error {:.2}% mean bits {:.3}",
                    out.test_error, out.mean_bits
                );
            }
            cells.push(SweepCell {
                lambda1,
                lambda2,
                test_error: out.test_error,
                mean_bits: out.mean_bits,
                compression: out.compression,
            });
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("lambda1,lambda2,test_error,mean_bits,compression\n");
    for c in cells {
        out.push_str(&format!(
            "{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            c.lambda1, c.lambda2, c.test_error, c.mean_bits, c.compression
        ));
    }
    out
}

/// Sweep command: loads data once, runs the grid and writes the summary.
pub fn run_sweep(base: &RunConfig, lambda1s: &[f64], lambda2s: &[f64], summary: Option<&Path>) -> Result<Vec<SweepCell>> {
    let (train, test) = load_data(base)?;
    let cells = sweep_on(base, lambda1s, lambda2s, &train, &test)?;
    if let Some(path) = summary {
        std::fs::write(path, sweep_csv(&cells)).map_err(Error::file(path))?;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn method_names() {
        for m in [Method::BitNet, Method::LeNet32, Method::Linear(8), Method::KMeans(3)] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("linear-0".parse::<Method>().is_err());
        assert!("kmeans-33".parse::<Method>().is_err());
        assert!("sgd".parse::<Method>().is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.batch_size, c.halve_every, c.bits_init), (200, 200, 8));
        assert_eq!((c.mu0, c.lambda1, c.lambda2), (1e-3, 1e-3, 1e-6));
    }

    #[test]
    fn lenet32_is_unregularized_at_32_bits() {
        let c = RunConfig {
            method: Method::LeNet32,
            ..RunConfig::default()
        };
        let s = c.step_config();
        assert_eq!((s.reg.lambda1, s.reg.lambda2, s.learn_bits), (0.0, 0.0, false));
        assert_eq!(c.initial_bits(), 32);
        assert_eq!(c.method.eval_source(), WeightSource::HighPrecision);
    }

    fn toy(n: usize, seed: u64) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        let mut data = Vec::with_capacity(n * 16);
        for &l in &labels {
            for p in 0..16 {
                let signal = if p % 3 == l as usize { 0.8 } else { -0.2 };
                data.push(signal + rng.gen_range(-0.1..0.1));
            }
        }
        Dataset {
            images: Tensor::new(vec![n, 1, 4, 4], data).unwrap(),
            labels,
            provenance: Provenance::Mnist,
        }
    }

    fn toy_config(dir: &Path) -> RunConfig {
        let arch = dir.join("toy.arch");
        std::fs::write(&arch, "input 1x4x4\nconv 3 3x3 pool 1x1\nclassify 3\n").unwrap();
        RunConfig {
            arch: arch.display().to_string(),
            epochs: 3,
            batch_size: 10,
            mu0: 0.05,
            log_every: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn runs_are_deterministic_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let (train, test) = (toy(40, 1), toy(30, 2));
        let a = run_on(&cfg, &train, &test).unwrap();
        let b = run_on(&cfg, &train, &test).unwrap();
        assert_eq!(a, b);
        // 4 batches per epoch: rows at 2 (iter), 4 (epoch), 6, 8 (epoch), 10, 12 (epoch)
        assert_eq!(a.records.len(), 6);
        assert_eq!(a.records.iter().filter(|r| r.test_error.is_some()).count(), 3);
        assert_eq!(a.records.last().unwrap().iteration, 12);
        assert!(a.test_error < 50.0, "toy problem not learned: {}", a.test_error);
    }

    #[test]
    fn eval_after_train_matches_last_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let (train, test) = (toy(40, 1), toy(30, 2));
        let out = run_on(&cfg, &train, &test).unwrap();
        let path = dir.path().join("m.btq");
        std::fs::write(&path, &out.model).unwrap();
        assert_eq!(eval_model::<f32>(&path, &test, 7).unwrap(), out.test_error);
    }

    #[test]
    fn input_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            arch: "lenet-mnist".into(),
            ..toy_config(dir.path())
        };
        let err = run_on(&cfg, &toy(10, 1), &toy(10, 2)).unwrap_err();
        assert!(err.to_string().contains("1x28x28"), "{err}");
    }

    #[test]
    fn sweep_grid_size() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            epochs: 1,
            ..toy_config(dir.path())
        };
        let cells = sweep_on(&cfg, &[1e-4, 1e-3], &[1e-7, 1e-6, 1e-5], &toy(20, 1), &toy(10, 2)).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(sweep_csv(&cells).lines().count(), 7);
        let single = sweep_on(&cfg, &[1e-3], &[1e-6], &toy(20, 1), &toy(10, 2)).unwrap();
        let direct = run_on(&cfg, &toy(20, 1), &toy(10, 2)).unwrap();
        assert_eq!(single[0].test_error, direct.test_error);
        assert_eq!(single[0].mean_bits, direct.mean_bits);
    }
}

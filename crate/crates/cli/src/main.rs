use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bitreg::data::{Normalization, Provenance};
use bitreg::experiment::{run_eval, run_sweep, run_train, Method, Precision, RunConfig};
use bitreg::net::WeightSource;
use bitreg::optim::Penalty;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bitreg", version, about = "Bit-regularized training of small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network, write the metrics CSV and packed model.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Metrics CSV output.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Packed model output.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Test error of a packed model on its grid reconstructions.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Packed model to evaluate.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        batch_size: usize,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
        precision: PrecisionArg,
    },
    /// Train over a grid of lambda1 x lambda2 and write a summary CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated lambda1 values.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-4, 1e-3, 1e-2])]
        lambda1s: Vec<f64>,
        /// Comma-separated lambda2 values.
        #[arg(long, value_delimiter = ',', default_values_t = [1e-7, 1e-6, 1e-5])]
        lambda2s: Vec<f64>,
        /// Summary CSV output.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, default_value = "mnist", value_parser = parse::<Provenance>)]
    dataset: Provenance,
    /// Directory holding the dataset files.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Use at most this many test examples.
    #[arg(long)]
    test_cap: Option<usize>,
    #[arg(long, value_enum, default_value_t = NormArg::Symmetric)]
    normalization: NormArg,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Architecture preset name or architecture file.
    #[arg(long, default_value = "lenet-mnist")]
    arch: String,
    /// bitnet, lenet32, linear-N or kmeans-N.
    #[arg(long, default_value = "bitnet", value_parser = parse::<Method>)]
    method: Method,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    mu0: f64,
    #[arg(long, default_value_t = 200)]
    halve_every: usize,
    #[arg(long, default_value_t = 1e-3)]
    lambda1: f64,
    #[arg(long, default_value_t = 1e-6)]
    lambda2: f64,
    #[arg(long, default_value = "exponential", value_parser = parse::<Penalty>)]
    penalty: Penalty,
    #[arg(long, default_value_t = 8)]
    bits_init: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use at most this many training examples.
    #[arg(long)]
    train_cap: Option<usize>,
    /// Extra metrics row every this many iterations (0 disables).
    #[arg(long, default_value_t = 10)]
    log_every: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    /// Dead-zone radius of the bit update.
    #[arg(long, default_value_t = 1e-9)]
    epsilon: f64,
    /// Include the ln 2 factors in the bit gradient.
    #[arg(long)]
    exact_derivatives: bool,
    /// Forward pass used for training.
    #[arg(long, value_enum, default_value_t = SourceArg::HighPrecision)]
    train_source: SourceArg,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    #[value(name = "32", alias = "f32")]
    F32,
    #[value(name = "64", alias = "f64")]
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Symmetric,
    Unit,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    HighPrecision,
    Quantized,
}

// a closed stdout (e.g. piped into `head`) is not an error
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn parse<T: std::str::FromStr<Err = bitreg::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: bitreg::Error| e.to_string())
}

fn precision(p: PrecisionArg) -> Precision {
    match p {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    }
}

fn data_config(d: DataArgs) -> RunConfig {
    RunConfig {
        dataset: d.dataset,
        data_dir: d.data_dir,
        test_cap: d.test_cap,
        normalization: match d.normalization {
            NormArg::Symmetric => Normalization::Symmetric,
            NormArg::Unit => Normalization::Unit,
        },
        ..RunConfig::default()
    }
}

fn run_config(a: RunArgs) -> RunConfig {
    RunConfig {
        arch: a.arch,
        method: a.method,
        epochs: a.epochs,
        batch_size: a.batch_size,
        mu0: a.mu0,
        halve_every: a.halve_every,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        penalty: a.penalty,
        bits_init: a.bits_init,
        seed: a.seed,
        train_cap: a.train_cap,
        log_every: a.log_every,
        precision: precision(a.precision),
        epsilon: a.epsilon,
        exact_derivatives: a.exact_derivatives,
        train_source: match a.train_source {
            SourceArg::HighPrecision => WeightSource::HighPrecision,
            SourceArg::Quantized => WeightSource::Quantized,
        },
        verbose: !a.quiet,
        ..data_config(a.data)
    }
}

fn run(cli: Cli) -> bitreg::Result<()> {
    match cli.command {
        Command::Train { run, metrics, model } => {
            let cfg = RunConfig {
                metrics,
                model,
                ..run_config(run)
            };
            let out = run_train(&cfg)?;
            out!("test error: {:.2}%", out.test_error);
            out!("bits: {:?}", out.bits);
            out!("mean bits: {:.3}", out.mean_bits);
            out!("compression: {:.2}x", out.compression);
        }
        Command::Eval {
            data,
            model,
            batch_size,
            precision: p,
        } => {
            let cfg = RunConfig {
                batch_size,
                precision: precision(p),
                ..data_config(data)
            };
            out!("test error: {:.2}%", run_eval(&cfg, &model)?);
        }
        Command::Sweep {
            run,
            lambda1s,
            lambda2s,
            summary,
        } => {
            let cells = run_sweep(&run_config(run), &lambda1s, &lambda2s, summary.as_deref())?;
            out!("lambda1,lambda2,test_error,mean_bits,compression");
            for c in cells {
                out!(
                    "{:e},{:e},{:.2},{:.3},{:.2}",
                    c.lambda1, c.lambda2, c.test_error, c.mean_bits, c.compression
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

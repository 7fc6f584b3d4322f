use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dpsparse_core::accounting::{calibrate_sigma, split_sigma_by_ratio};
use dpsparse_core::data::{generate_dataset, read_dataset, DatasetSpec};
use dpsparse_core::harness::{
    benchmark_updates, parse_grid, run_experiment, run_streaming, run_sweep, write_bench_records,
    write_records, ExperimentRecord, StreamingConfig, TrainSettings, UpdateBenchRecord,
};
use dpsparse_core::optim::{Algorithm, FrequencySource};

#[derive(Parser)]
#[command(name = "dpsparse", version, about = "Differentially private embedding training \
with sparsity-preserving gradient updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Generate(GenerateArgs),
    /// Train one model and report accuracy, AUC and noised-coordinate stats.
    Train(TrainArgs),
    /// Calibrate noise multipliers to a privacy budget.
    Calibrate(CalibrateArgs),
    /// Run a hyper-parameter grid and report the utility/reduction frontier.
    Sweep(SweepArgs),
    /// Train across consecutive periods with refreshed vocabulary selection.
    Stream(StreamArgs),
    /// Time dense versus sparse embedding-table updates.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON file describing the dataset to synthesize.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    /// Dataset CSV produced by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_parser = parse_algo, default_value = "dpsgd")]
    algo: Algorithm,
    /// Total privacy budget; "inf" disables noise.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Defaults to 1/N of the dataset.
    #[arg(long)]
    delta: Option<f64>,
    /// sigma1 / sigma2 split for the adaptive variants.
    #[arg(long, default_value_t = 5.0)]
    sigma_ratio: f64,
    #[arg(long, default_value_t = 10.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// Selected rows across all features for the frequency-filtered variants.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, value_parser = parse_freq_source, default_value = "public")]
    freq_source: FrequencySource,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 500)]
    steps: u32,
    #[arg(long, default_value_t = 0.25)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the records to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Subsampling rate B/N.
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    steps: u32,
    /// sigma1 / sigma2; "inf" puts the whole budget on the gradient stage.
    #[arg(long, default_value_t = 5.0)]
    sigma_ratio: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Grid file: one `key=value[,value...]` line per hyper-parameter.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Number of contiguous periods; the last is evaluation-only.
    #[arg(long)]
    periods: usize,
    /// Examples per period (the first periods * period-len rows are used).
    #[arg(long)]
    period_len: usize,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Comma-separated vocabulary sizes; scientific notation accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_vocab, required = true)]
    vocab: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: dpsparse_core::Error| e.to_string())
}

fn parse_freq_source(s: &str) -> Result<FrequencySource, String> {
    Ok(match s {
        "public" => FrequencySource::PublicPrior,
        "dp_topk" => FrequencySource::DpTopk,
        "first" => FrequencySource::FirstPeriod,
        "all" => FrequencySource::AllPeriods,
        "streaming" => FrequencySource::Streaming,
        other => {
            return Err(format!(
                "unknown frequency source {other:?} (expected public|dp_topk|first|all|streaming)"
            ))
        }
    })
}

fn parse_vocab(s: &str) -> Result<usize, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad vocabulary size {s:?}"))?;
    if !v.is_finite() || v < 1.0 || v > 1e12 || v.fract() != 0.0 {
        return Err(format!("vocabulary size {s:?} must be a positive integer"));
    }
    Ok(v as usize)
}

fn settings_from(opts: &TrainOpts) -> TrainSettings {
    TrainSettings {
        algorithm: opts.algo,
        epsilon: opts.epsilon,
        delta: opts.delta,
        sigma_ratio: opts.sigma_ratio,
        tau: opts.tau,
        c1: opts.c1,
        c2: opts.c2,
        k: opts.k,
        frequency_source: opts.freq_source,
        batch_size: opts.batch,
        steps: opts.steps,
        lr: opts.lr,
        seed: opts.seed,
        ..TrainSettings::new(opts.algo)
    }
}

fn emit_records(records: &[ExperimentRecord], out: Option<&PathBuf>) -> Result<()> {
    println!("{}", ExperimentRecord::CSV_HEADER);
    for r in records {
        println!("{}", r.to_csv_row());
    }
    if let Some(path) = out {
        write_records(path, records)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => {
            let text = std::fs::read_to_string(&args.spec)
                .with_context(|| format!("reading {}", args.spec.display()))?;
            let mut spec: DatasetSpec =
                serde_json::from_str(&text).context("parsing dataset spec")?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            generate_dataset(&spec, &args.out)?;
            println!(
                "wrote {} ({} examples, {} features, {} numeric)",
                args.out.display(),
                spec.n_examples,
                spec.features.len(),
                spec.n_numeric
            );
        }
        Command::Train(args) => {
            let dataset = read_dataset(&args.opts.data)?;
            let record = run_experiment(&dataset, &settings_from(&args.opts))?;
            emit_records(&[record], args.opts.out.as_ref())?;
        }
        Command::Calibrate(args) => {
            let sigma_effective =
                calibrate_sigma(args.epsilon, args.delta, args.gamma, args.steps)?;
            let (sigma1, sigma2) = split_sigma_by_ratio(sigma_effective, args.sigma_ratio)?;
            println!(
                "{},{},{},{},{},{},{}",
                args.epsilon, args.delta, args.gamma, args.steps, sigma1, sigma2, sigma_effective
            );
        }
        Command::Sweep(args) => {
            let dataset = read_dataset(&args.data)?;
            let text = std::fs::read_to_string(&args.grid)
                .with_context(|| format!("reading {}", args.grid.display()))?;
            let base = TrainSettings::new(Algorithm::AdaFest);
            let cells = parse_grid(&text, &base)?;
            let (records, frontiers) = run_sweep(&dataset, &cells)?;
            emit_records(&records, args.out.as_ref())?;
            for (epsilon, frontier) in &frontiers {
                println!("# frontier at epsilon={epsilon}");
                println!("max_utility_loss,best_reduction,algorithm");
                for point in frontier {
                    let algo =
                        point.algorithm.map_or_else(|| "-".to_string(), |a| a.to_string());
                    println!("{},{},{}", point.max_utility_loss, point.best_reduction, algo);
                }
            }
        }
        Command::Stream(args) => {
            let mut dataset = read_dataset(&args.opts.data)?;
            let need = args
                .periods
                .checked_mul(args.period_len)
                .filter(|&n| n > 0)
                .context("periods * period-len must be positive")?;
            if need > dataset.examples.len() {
                bail!(
                    "dataset has {} examples but {} periods of {} need {need}",
                    dataset.examples.len(),
                    args.periods,
                    args.period_len
                );
            }
            dataset.examples.truncate(need);
            let stream = StreamingConfig { periods: args.periods, refresh_every: 1 };
            let records = run_streaming(&dataset, &stream, &settings_from(&args.opts))?;
            emit_records(&records, args.opts.out.as_ref())?;
        }
        Command::Benchmark(args) => {
            let records =
                benchmark_updates(&args.vocab, args.dim, args.batch, args.trials, 1)?;
            println!("{}", UpdateBenchRecord::CSV_HEADER);
            for r in &records {
                println!("{}", r.to_csv_row());
            }
            if let Some(path) = &args.out {
                write_bench_records(path, &records)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

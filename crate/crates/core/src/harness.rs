//! Experiment drivers: single training runs with calibrated noise,
//! streaming simulation with selection refresh, hyper-parameter sweeps
//! with a utility-versus-reduction frontier, and the dense-versus-sparse
//! update micro-benchmark.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accounting::{calibrate_sigma, split_sigma_by_ratio, BudgetSpec};
use crate::data::{bucket_counts, period_ranges, Dataset};
use crate::error::{Error, Result};
use crate::mechanisms::{NoiseConfig, SelectionNoise};
use crate::metrics::{accuracy, auc};
use crate::model::{Example, Matrix, ModelParams};
use crate::optim::{
    dpfest_select, run_step, Algorithm, FrequencySource, OptimizerConfig, SelectedVocabulary,
};
use crate::rng::{RngStream, StreamPurpose};

pub const DEFAULT_EMBEDDING_DIM: usize = 8;
pub const DEFAULT_SELECTION_EPSILON: f64 = 0.01;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;

/// Raw experiment knobs as they arrive from the command line; noise scales
/// are derived from the privacy budget at run time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    pub algorithm: Algorithm,
    /// Total privacy budget; infinite switches noise off entirely.
    pub epsilon: f64,
    /// None defaults to 1/N for the dataset at hand.
    pub delta: Option<f64>,
    /// sigma1 / sigma2 for the adaptive variants.
    pub sigma_ratio: f64,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub k: usize,
    pub frequency_source: FrequencySource,
    pub batch_size: usize,
    pub steps: u32,
    pub lr: f64,
    pub seed: u64,
    pub embedding_dim: usize,
    pub eval_fraction: f64,
    pub selection_epsilon: f64,
    /// Poisson-subsample each batch (inclusion probability B/N) instead of
    /// fixed-size shuffled minibatches, matching the accountant's model.
    pub poisson: bool,
}

impl TrainSettings {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainSettings {
            algorithm,
            epsilon: 1.0,
            delta: None,
            sigma_ratio: 5.0,
            tau: 10.0,
            c1: 1.0,
            c2: 1.0,
            k: 1000,
            frequency_source: FrequencySource::PublicPrior,
            batch_size: 1024,
            steps: 500,
            lr: 0.25,
            seed: 0,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            eval_fraction: DEFAULT_EVAL_FRACTION,
            selection_epsilon: DEFAULT_SELECTION_EPSILON,
            poisson: false,
        }
    }
}

/// Noise scales and budget resolved against a concrete training set size.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub config: OptimizerConfig,
    pub budget: BudgetSpec,
    pub gamma: f64,
    pub n_train: usize,
}

/// Memoizes noise calibration across sweep cells sharing a budget.
#[derive(Default)]
pub struct SigmaCache {
    entries: HashMap<(u64, u64, u64, u32), f64>,
}

impl SigmaCache {
    fn get(&mut self, epsilon: f64, delta: f64, gamma: f64, steps: u32) -> Result<f64> {
        let key = (epsilon.to_bits(), delta.to_bits(), gamma.to_bits(), steps);
        if let Some(&sigma) = self.entries.get(&key) {
            return Ok(sigma);
        }
        let sigma = calibrate_sigma(epsilon, delta, gamma, steps)?;
        self.entries.insert(key, sigma);
        Ok(sigma)
    }
}

/// Turn raw settings into a runnable configuration: derive delta and the
/// sampling rate from the dataset, calibrate the effective noise scale to
/// the training budget (minus any selection spend), and split it across
/// the survey and gradient stages for the adaptive variants.
pub fn resolve(
    settings: &TrainSettings,
    dataset_len: usize,
    n_train: usize,
    cache: &mut SigmaCache,
) -> Result<ResolvedRun> {
    if settings.batch_size == 0 || settings.batch_size > n_train {
        return Err(Error::input(format!(
            "batch size {} must be in [1, {n_train}]",
            settings.batch_size
        )));
    }
    if !(settings.epsilon > 0.0) {
        return Err(Error::input(format!("epsilon must be positive, got {}", settings.epsilon)));
    }
    let delta = match settings.delta {
        Some(d) => d,
        None => 1.0 / dataset_len as f64,
    };
    let gamma = settings.batch_size as f64 / n_train as f64;

    let selection_epsilon = if settings.algorithm.needs_selection()
        && settings.frequency_source == FrequencySource::DpTopk
    {
        settings.selection_epsilon
    } else {
        0.0
    };
    let budget = BudgetSpec { epsilon: settings.epsilon, delta, selection_epsilon };
    budget.validate()?;

    let noise = if settings.algorithm == Algorithm::Sgd || settings.epsilon.is_infinite() {
        NoiseConfig { sigma1: 0.0, c1: settings.c1, tau: settings.tau, sigma2: 0.0, c2: f64::INFINITY }
    } else {
        let sigma_effective =
            cache.get(budget.train_epsilon(), delta, gamma, settings.steps)?;
        match settings.algorithm {
            Algorithm::Sgd => unreachable!(),
            Algorithm::DpSgd | Algorithm::DpFest => NoiseConfig {
                sigma1: 0.0,
                c1: settings.c1,
                tau: 0.0,
                sigma2: sigma_effective,
                c2: settings.c2,
            },
            Algorithm::AdaFest | Algorithm::AdaFestPlus => {
                if !settings.sigma_ratio.is_finite() || settings.sigma_ratio <= 0.0 {
                    return Err(Error::input(format!(
                        "adaptive filtering needs a positive finite sigma ratio, got {}",
                        settings.sigma_ratio
                    )));
                }
                let (sigma1, sigma2) =
                    split_sigma_by_ratio(sigma_effective, settings.sigma_ratio)?;
                NoiseConfig {
                    sigma1,
                    c1: settings.c1,
                    tau: settings.tau,
                    sigma2,
                    c2: settings.c2,
                }
            }
        }
    };
    noise.validate()?;

    let config = OptimizerConfig {
        algorithm: settings.algorithm,
        lr: settings.lr,
        batch_size: settings.batch_size,
        steps: settings.steps,
        noise,
        dpfest_k: settings.k,
        dpfest_epsilon: selection_epsilon,
        frequency_source: settings.frequency_source,
    };
    config.validate()?;
    Ok(ResolvedRun { config, budget, gamma, n_train })
}

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub delta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub tau: f64,
    pub c1: f64,
    pub c2: f64,
    pub k: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub mean_noised_coords: f64,
    pub reduction_factor: f64,
    pub wall_ms: f64,
}

impl ExperimentRecord {
    pub const CSV_HEADER: &'static str = "algorithm,epsilon,delta,sigma1,sigma2,tau,c1,c2,k,\
                                          accuracy,auc,mean_noised_coords,reduction_factor,wall_ms";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.algorithm,
            self.epsilon,
            self.delta,
            self.sigma1,
            self.sigma2,
            self.tau,
            self.c1,
            self.c2,
            self.k,
            self.accuracy,
            self.auc,
            self.mean_noised_coords,
            self.reduction_factor,
            self.wall_ms
        )
    }

    /// Equality on everything except the timing column.
    pub fn same_outcome(&self, other: &ExperimentRecord) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_ms = 0.0;
        b.wall_ms = 0.0;
        a == b
    }
}

pub fn write_records(path: &std::path::Path, records: &[ExperimentRecord]) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", ExperimentRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

enum Batching {
    Shuffled { order: Vec<usize>, pos: usize },
    Poisson { gamma: f64 },
}

/// Yields training batches: either fixed-size minibatches over a shuffled
/// epoch (reshuffled when exhausted, remainder dropped) or Poisson samples
/// with inclusion probability B/N.
struct Batcher<'a> {
    examples: &'a [Example],
    batch_size: usize,
    mode: Batching,
    rng: RngStream,
}

impl<'a> Batcher<'a> {
    fn new(examples: &'a [Example], batch_size: usize, poisson: bool, rng: RngStream) -> Self {
        let mode = if poisson {
            Batching::Poisson { gamma: batch_size as f64 / examples.len() as f64 }
        } else {
            Batching::Shuffled { order: Vec::new(), pos: usize::MAX }
        };
        Batcher { examples, batch_size, mode, rng }
    }

    fn next_batch(&mut self) -> Vec<&'a Example> {
        match &mut self.mode {
            Batching::Shuffled { order, pos } => {
                if *pos == usize::MAX || *pos + self.batch_size > order.len() {
                    use rand::seq::SliceRandom;
                    *order = (0..self.examples.len()).collect();
                    order.shuffle(self.rng.inner());
                    *pos = 0;
                }
                let batch = order[*pos..*pos + self.batch_size]
                    .iter()
                    .map(|&i| &self.examples[i])
                    .collect();
                *pos += self.batch_size;
                batch
            }
            Batching::Poisson { gamma } => loop {
                let g = *gamma;
                let batch: Vec<&Example> = self
                    .examples
                    .iter()
                    .filter(|_| self.rng.uniform() < g)
                    .collect();
                if !batch.is_empty() {
                    return batch;
                }
            },
        }
    }
}

fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<(f64, f64)> {
    let mut logits = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        logits.push(params.forward(ex)?.logit);
        labels.push(ex.label);
    }
    Ok((accuracy(&logits, &labels)?, auc(&logits, &labels)?))
}

fn select_vocabulary(
    settings: &TrainSettings,
    counts: &[Vec<u64>],
    rng: &mut RngStream,
) -> Result<Option<SelectedVocabulary>> {
    if !settings.algorithm.needs_selection() {
        return Ok(None);
    }
    let noise = match settings.frequency_source {
        FrequencySource::DpTopk => {
            SelectionNoise::Private { epsilon: settings.selection_epsilon }
        }
        _ => SelectionNoise::Noiseless,
    };
    Ok(Some(dpfest_select(counts, settings.k, noise, rng)?))
}

struct TrainedModel {
    params: ModelParams,
    mean_noised: f64,
}

fn train_on(
    params: ModelParams,
    train: &[Example],
    cfg: &OptimizerConfig,
    selected: Option<&SelectedVocabulary>,
    poisson: bool,
    seed: u64,
) -> Result<TrainedModel> {
    let mut params = params;
    let mut batcher = Batcher::new(
        train,
        cfg.batch_size,
        poisson,
        RngStream::with_substream(seed, StreamPurpose::Sampling, 1),
    );
    let mut rng = RngStream::new(seed, StreamPurpose::MechanismNoise);
    let mut noised = 0.0;
    for _ in 0..cfg.steps {
        let batch = batcher.next_batch();
        let report = run_step(&mut params, &batch, cfg, selected, &mut rng)?;
        noised += report.noised_coordinate_count as f64;
    }
    Ok(TrainedModel { params, mean_noised: noised / cfg.steps as f64 })
}

fn record_from(
    settings: &TrainSettings,
    run: &ResolvedRun,
    accuracy: f64,
    auc: f64,
    mean_noised: f64,
    total_params: usize,
    wall_ms: f64,
) -> ExperimentRecord {
    let noise = &run.config.noise;
    let selection = settings.algorithm.needs_selection();
    let adaptive = matches!(settings.algorithm, Algorithm::AdaFest | Algorithm::AdaFestPlus);
    ExperimentRecord {
        algorithm: settings.algorithm,
        epsilon: settings.epsilon,
        delta: run.budget.delta,
        sigma1: if adaptive { noise.sigma1 } else { 0.0 },
        sigma2: noise.sigma2,
        tau: if adaptive { noise.tau } else { 0.0 },
        c1: if adaptive { noise.c1 } else { 0.0 },
        c2: noise.c2,
        k: if selection { settings.k } else { 0 },
        accuracy,
        auc,
        mean_noised_coords: mean_noised,
        reduction_factor: total_params as f64 / mean_noised,
        wall_ms,
    }
}

/// Train on the prefix split, evaluate on the suffix, and report one record.
pub fn run_experiment(dataset: &Dataset, settings: &TrainSettings) -> Result<ExperimentRecord> {
    let started = Instant::now();
    let (train, eval) = dataset.split(settings.eval_fraction)?;
    let mut cache = SigmaCache::default();
    let run = resolve(settings, dataset.len(), train.len(), &mut cache)?;

    match settings.frequency_source {
        FrequencySource::PublicPrior | FrequencySource::DpTopk => {}
        other if settings.algorithm.needs_selection() => {
            return Err(Error::input(format!(
                "frequency source {other} needs the streaming driver"
            )));
        }
        _ => {}
    }

    let selected = if settings.algorithm.needs_selection() {
        let counts = bucket_counts(train, &dataset.vocab_sizes)?;
        let mut gumbel = RngStream::new(settings.seed, StreamPurpose::Gumbel);
        select_vocabulary(settings, &counts, &mut gumbel)?
    } else {
        None
    };

    let params = ModelParams::init(
        dataset.feature_specs(settings.embedding_dim),
        dataset.n_numeric,
        &mut RngStream::new(settings.seed, StreamPurpose::Init),
    );
    let total_params = params.param_count();
    let trained = train_on(
        params,
        train,
        &run.config,
        selected.as_ref(),
        settings.poisson,
        settings.seed,
    )?;
    let (acc, area) = evaluate(&trained.params, eval)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(record_from(settings, &run, acc, area, trained.mean_noised, total_params, wall_ms))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamingConfig {
    /// How many contiguous periods the dataset splits into (>= 2; the last
    /// one is never trained on).
    pub periods: usize,
    /// Selection refresh interval in periods.
    pub refresh_every: usize,
}

/// Bucket counts accumulated one period at a time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningCounts {
    totals: Vec<Vec<u64>>,
}

impl RunningCounts {
    pub fn new(vocab_sizes: &[usize]) -> Self {
        RunningCounts { totals: vocab_sizes.iter().map(|&c| vec![0; c]).collect() }
    }

    pub fn add_period(&mut self, examples: &[Example]) -> Result<()> {
        let vocab_sizes: Vec<usize> = self.totals.iter().map(Vec::len).collect();
        let counts = bucket_counts(examples, &vocab_sizes)?;
        for (t, c) in self.totals.iter_mut().zip(counts) {
            for (a, b) in t.iter_mut().zip(c) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn totals(&self) -> &[Vec<u64>] {
        &self.totals
    }
}

/// Simulate online training: the data splits into contiguous periods; the
/// model trains on each period in order and is evaluated on the following
/// one. Selection-based variants re-select at refresh boundaries using the
/// configured frequency source (first period only, the whole horizon, or
/// the running stream seen so far). Budgets are per period: each period is
/// a disjoint slice of the data, so the overall guarantee is the per-period
/// one by parallel composition.
pub fn run_streaming(
    dataset: &Dataset,
    stream: &StreamingConfig,
    settings: &TrainSettings,
) -> Result<Vec<ExperimentRecord>> {
    if stream.periods < 2 {
        return Err(Error::input("streaming needs at least 2 periods"));
    }
    if stream.refresh_every == 0 {
        return Err(Error::input("refresh interval must be at least 1 period"));
    }
    if settings.algorithm.needs_selection()
        && !matches!(
            settings.frequency_source,
            FrequencySource::FirstPeriod | FrequencySource::AllPeriods | FrequencySource::Streaming
        )
    {
        return Err(Error::input(format!(
            "streaming selection needs a period-based frequency source, got {}",
            settings.frequency_source
        )));
    }

    let ranges = period_ranges(dataset.len(), stream.periods);
    let periods: Vec<&[Example]> =
        ranges.iter().map(|r| &dataset.examples[r.clone()]).collect();
    let needs_selection = settings.algorithm.needs_selection();

    let first_counts = bucket_counts(periods[0], &dataset.vocab_sizes)?;
    let all_counts = bucket_counts(&dataset.examples, &dataset.vocab_sizes)?;
    let mut running = RunningCounts::new(&dataset.vocab_sizes);

    let mut params = ModelParams::init(
        dataset.feature_specs(settings.embedding_dim),
        dataset.n_numeric,
        &mut RngStream::new(settings.seed, StreamPurpose::Init),
    );
    let total_params = params.param_count();
    let mut cache = SigmaCache::default();
    let mut gumbel = RngStream::new(settings.seed, StreamPurpose::Gumbel);
    let mut selected: Option<SelectedVocabulary> = None;
    let mut records = Vec::with_capacity(stream.periods - 1);

    for (i, period) in periods[..stream.periods - 1].iter().enumerate() {
        let started = Instant::now();
        running.add_period(period)?;
        if needs_selection && i % stream.refresh_every == 0 {
            let counts = match settings.frequency_source {
                FrequencySource::FirstPeriod => &first_counts,
                FrequencySource::AllPeriods => &all_counts,
                FrequencySource::Streaming => running.totals(),
                _ => unreachable!(),
            };
            selected = select_vocabulary(settings, counts, &mut gumbel)?;
        }

        let run = resolve(settings, dataset.len(), period.len(), &mut cache)?;
        let trained = train_on(
            params,
            period,
            &run.config,
            selected.as_ref(),
            settings.poisson,
            settings.seed.wrapping_add(i as u64),
        )?;
        params = trained.params;
        let (acc, area) = evaluate(&params, periods[i + 1])?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        records.push(record_from(
            settings,
            &run,
            acc,
            area,
            trained.mean_noised,
            total_params,
            wall_ms,
        ));
    }
    Ok(records)
}

/// Parse a sweep grid: one `key=value[,value...]` line per hyper-parameter,
/// expanded as a cartesian product over the base settings. `#` starts a
/// comment line.
pub fn parse_grid(text: &str, base: &TrainSettings) -> Result<Vec<TrainSettings>> {
    let mut cells = vec![base.clone()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("grid line {}: missing '='", lineno + 1)))?;
        let key = key.trim();
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        if values.is_empty() || values.iter().any(|v| v.is_empty()) {
            return Err(Error::parse(format!("grid line {}: empty value", lineno + 1)));
        }
        let mut expanded = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for value in &values {
                let mut next = cell.clone();
                apply_grid_key(&mut next, key, value).map_err(|e| {
                    Error::parse(format!("grid line {}: {e}", lineno + 1))
                })?;
                expanded.push(next);
            }
        }
        cells = expanded;
    }
    Ok(cells)
}

fn apply_grid_key(cell: &mut TrainSettings, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::parse(format!("bad value {value:?} for {key}")))
    }
    match key {
        "algo" => cell.algorithm = value.parse()?,
        "epsilon" => {
            cell.epsilon = if value == "inf" { f64::INFINITY } else { num(key, value)? }
        }
        "delta" => cell.delta = Some(num(key, value)?),
        "sigma_ratio" => cell.sigma_ratio = num(key, value)?,
        "tau" => cell.tau = num(key, value)?,
        "c1" => cell.c1 = num(key, value)?,
        "c2" => cell.c2 = num(key, value)?,
        "k" => cell.k = num(key, value)?,
        "freq_source" => cell.frequency_source = value.parse()?,
        "batch" => cell.batch_size = num(key, value)?,
        "steps" => cell.steps = num(key, value)?,
        "lr" => cell.lr = num(key, value)?,
        "seed" => cell.seed = num(key, value)?,
        other => return Err(Error::parse(format!("unknown grid key {other:?}"))),
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub max_utility_loss: f64,
    pub best_reduction: f64,
    pub algorithm: Option<Algorithm>,
}

/// For each allowed utility loss (baseline AUC minus cell AUC), the best
/// gradient-size reduction among private cells within that loss.
pub fn utility_reduction_frontier(
    records: &[ExperimentRecord],
    baseline_auc: f64,
    thresholds: &[f64],
) -> Vec<FrontierPoint> {
    thresholds
        .iter()
        .map(|&t| {
            let best = records
                .iter()
                .filter(|r| r.algorithm != Algorithm::Sgd)
                .filter(|r| baseline_auc - r.auc <= t)
                .max_by(|a, b| a.reduction_factor.total_cmp(&b.reduction_factor));
            FrontierPoint {
                max_utility_loss: t,
                best_reduction: best.map_or(f64::NAN, |r| r.reduction_factor),
                algorithm: best.map(|r| r.algorithm),
            }
        })
        .collect()
}

pub const FRONTIER_THRESHOLDS: [f64; 6] = [0.0, 0.001, 0.0025, 0.005, 0.01, 0.02];

/// Run every cell of a sweep plus a dense DP-SGD baseline per distinct
/// budget, returning (records, per-budget frontiers). The baseline shares
/// the cell's batch, steps, lr and c2 but noises densely.
pub fn run_sweep(
    dataset: &Dataset,
    cells: &[TrainSettings],
) -> Result<(Vec<ExperimentRecord>, Vec<(f64, Vec<FrontierPoint>)>)> {
    if cells.is_empty() {
        return Err(Error::input("sweep grid is empty"));
    }
    let mut records = Vec::with_capacity(cells.len());
    for cell in cells {
        records.push(run_experiment(dataset, cell)?);
    }

    let mut budgets: Vec<f64> = Vec::new();
    for cell in cells {
        if cell.epsilon.is_finite() && !budgets.iter().any(|&e| e == cell.epsilon) {
            budgets.push(cell.epsilon);
        }
    }
    let mut frontiers = Vec::with_capacity(budgets.len());
    for &epsilon in &budgets {
        let template = cells.iter().find(|c| c.epsilon == epsilon).expect("budget came from cells");
        let baseline_settings = TrainSettings {
            algorithm: Algorithm::DpSgd,
            epsilon,
            ..template.clone()
        };
        let baseline = run_experiment(dataset, &baseline_settings)?;
        let at_budget: Vec<ExperimentRecord> = records
            .iter()
            .filter(|r| r.epsilon == epsilon)
            .cloned()
            .collect();
        let frontier =
            utility_reduction_frontier(&at_budget, baseline.auc, &FRONTIER_THRESHOLDS);
        records.push(baseline);
        frontiers.push((epsilon, frontier));
    }
    Ok((records, frontiers))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBenchRecord {
    pub vocab: usize,
    pub dim: usize,
    pub batch: usize,
    pub trials: usize,
    pub dense_ms: f64,
    pub sparse_ms: f64,
    pub reduction_factor: f64,
}

impl UpdateBenchRecord {
    pub const CSV_HEADER: &'static str =
        "vocab,dim,batch,trials,dense_ms,sparse_ms,reduction_factor";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.vocab,
            self.dim,
            self.batch,
            self.trials,
            self.dense_ms,
            self.sparse_ms,
            self.reduction_factor
        )
    }
}

pub fn write_bench_records(
    path: &std::path::Path,
    records: &[UpdateBenchRecord],
) -> Result<()> {
    use std::io::Write as _;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", UpdateBenchRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Time one embedding-table update the dense way (noise on every
/// coordinate) versus the sparse way (scatter the touched rows, noise only
/// those rows). Both paths share the same scatter work; the mean over
/// `trials` timed repetitions (after one untimed warmup that also faults
/// in the table memory) is reported per vocabulary size.
pub fn benchmark_updates(
    vocab_sizes: &[usize],
    dim: usize,
    batch: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<UpdateBenchRecord>> {
    if vocab_sizes.is_empty() {
        return Err(Error::input("no vocabulary sizes to benchmark"));
    }
    if dim == 0 || batch == 0 || trials == 0 {
        return Err(Error::input("dim, batch and trials must be positive"));
    }
    let lr = 0.1;
    let std = 1.0;
    let mut records = Vec::with_capacity(vocab_sizes.len());
    for (vi, &vocab) in vocab_sizes.iter().enumerate() {
        if vocab == 0 {
            return Err(Error::input("vocabulary size must be positive"));
        }
        let mut table = Matrix::zeros(vocab, dim);
        let mut rng =
            RngStream::with_substream(seed, StreamPurpose::MechanismNoise, vi as u64);

        let rows_for = |rng: &mut RngStream, trial: usize| -> Vec<usize> {
            use rand::Rng;
            let mut rows = BTreeSet::new();
            let r = rng.inner();
            for _ in 0..batch {
                rows.insert(r.random_range(0..vocab));
            }
            let _ = trial;
            rows.into_iter().collect()
        };

        let scatter = |table: &mut Matrix, rows: &[usize]| {
            for &r in rows {
                let grad = 1e-3 * ((r % 13) as f64 - 6.0);
                for v in table.row_mut(r) {
                    *v -= lr * grad;
                }
            }
        };

        let mut dense_total = 0.0;
        let mut sparse_total = 0.0;
        for trial in 0..=trials {
            let rows = rows_for(&mut rng, trial);
            let timed = trial > 0;

            let t0 = Instant::now();
            scatter(&mut table, &rows);
            for v in &mut table.data {
                *v -= lr * std * rng.gaussian();
            }
            if timed {
                dense_total += t0.elapsed().as_secs_f64();
            }

            let t1 = Instant::now();
            scatter(&mut table, &rows);
            for &r in &rows {
                for v in table.row_mut(r) {
                    *v -= lr * std * rng.gaussian();
                }
            }
            if timed {
                sparse_total += t1.elapsed().as_secs_f64();
            }
        }
        let dense_ms = dense_total / trials as f64 * 1e3;
        let sparse_ms = sparse_total / trials as f64 * 1e3;
        records.push(UpdateBenchRecord {
            vocab,
            dim,
            batch,
            trials,
            dense_ms,
            sparse_ms,
            reduction_factor: dense_ms / sparse_ms,
        });
    }
    Ok(records)
}

//! Training procedures: plain SGD, DP-SGD, and the sparsity-preserving
//! variants built on frequency filtering (static top-k selection) and
//! adaptive filtering (per-batch private survival masks).
//!
//! All variants share one pipeline: per-example gradients, optional row
//! restriction, per-example clipping to `c2`, summation in example order,
//! masked Gaussian noising, 1/B scaling, and application. The degenerate
//! settings therefore coincide exactly: adaptive filtering with zero noise
//! and threshold and an unbounded clip reproduces plain SGD bit for bit,
//! and frequency filtering over the full vocabulary reproduces DP-SGD bit
//! for bit under the same draw stream.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{
    contribution_map_within, dp_topk_multifeature, exact_topk, noise_rows, noise_std,
    sample_mask_efficient, ContributionMap, NoiseConfig, SelectionNoise, SurvivalMask,
};
use crate::model::{bce_loss, Example, FeatureSpec, ModelParams, PerExampleGradient};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    DpSgd,
    DpFest,
    AdaFest,
    AdaFestPlus,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Sgd,
        Algorithm::DpSgd,
        Algorithm::DpFest,
        Algorithm::AdaFest,
        Algorithm::AdaFestPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::DpSgd => "dpsgd",
            Algorithm::DpFest => "dpfest",
            Algorithm::AdaFest => "adafest",
            Algorithm::AdaFestPlus => "adafest_plus",
        }
    }

    /// Whether the variant needs a pre-selected vocabulary.
    pub fn needs_selection(self) -> bool {
        matches!(self, Algorithm::DpFest | Algorithm::AdaFestPlus)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::parse(format!("unknown algorithm {s:?}")))
    }
}

/// Which data the frequency-filtering selection counts come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySource {
    PublicPrior,
    DpTopk,
    FirstPeriod,
    AllPeriods,
    Streaming,
}

impl FrequencySource {
    pub const ALL: [FrequencySource; 5] = [
        FrequencySource::PublicPrior,
        FrequencySource::DpTopk,
        FrequencySource::FirstPeriod,
        FrequencySource::AllPeriods,
        FrequencySource::Streaming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FrequencySource::PublicPrior => "public_prior",
            FrequencySource::DpTopk => "dp_topk",
            FrequencySource::FirstPeriod => "first_period",
            FrequencySource::AllPeriods => "all_periods",
            FrequencySource::Streaming => "streaming",
        }
    }
}

impl fmt::Display for FrequencySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrequencySource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrequencySource::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::parse(format!("unknown frequency source {s:?}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u32,
    pub noise: NoiseConfig,
    pub dpfest_k: usize,
    pub dpfest_epsilon: f64,
    pub frequency_source: FrequencySource,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::input(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::input("steps must be at least 1"));
        }
        self.noise.validate()?;
        if self.algorithm.needs_selection() || self.algorithm == Algorithm::DpFest {
            if self.dpfest_k == 0 {
                return Err(Error::input("dpfest_k must be positive for selection-based variants"));
            }
        }
        if self.frequency_source == FrequencySource::DpTopk
            && !(self.dpfest_epsilon > 0.0 && self.dpfest_epsilon.is_finite())
        {
            return Err(Error::input(format!(
                "dp_topk selection needs a positive finite epsilon, got {}",
                self.dpfest_epsilon
            )));
        }
        Ok(())
    }
}

/// Buckets retained by static frequency selection, one mask per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedVocabulary {
    pub masks: Vec<SurvivalMask>,
}

impl SelectedVocabulary {
    pub fn full(features: &[FeatureSpec]) -> Self {
        SelectedVocabulary {
            masks: features.iter().map(|f| SurvivalMask::full(f.vocab_size)).collect(),
        }
    }

    pub fn from_feature_rows(vocab_sizes: &[usize], rows: Vec<Vec<usize>>) -> Result<Self> {
        if vocab_sizes.len() != rows.len() {
            return Err(Error::structural(format!(
                "{} row sets for {} features",
                rows.len(),
                vocab_sizes.len()
            )));
        }
        let masks = vocab_sizes
            .iter()
            .zip(rows)
            .map(|(&c, r)| SurvivalMask::from_rows(c, r))
            .collect::<Result<_>>()?;
        Ok(SelectedVocabulary { masks })
    }

    /// Exact top-k over public per-feature scores; the budget k is split
    /// evenly (floor(k/p) slots per feature) and costs no privacy.
    pub fn from_public_scores(scores: &[Vec<f64>], k_total: usize) -> Result<Self> {
        let p = scores.len();
        if p == 0 {
            return Err(Error::input("no features to select over"));
        }
        let k_each = k_total / p;
        let masks = scores
            .iter()
            .map(|s| {
                SurvivalMask::from_rows(s.len(), exact_topk(s, k_each))
            })
            .collect::<Result<_>>()?;
        Ok(SelectedVocabulary { masks })
    }

    pub fn total_rows(&self) -> usize {
        self.masks.iter().map(|m| m.len()).sum()
    }

    pub fn is_full(&self) -> bool {
        self.masks.iter().all(|m| m.len() == m.vocab_size)
    }

    fn check_shapes(&self, features: &[FeatureSpec]) -> Result<()> {
        if self.masks.len() != features.len() {
            return Err(Error::structural(format!(
                "selection covers {} features, model has {}",
                self.masks.len(),
                features.len()
            )));
        }
        for (mask, f) in self.masks.iter().zip(features) {
            if mask.vocab_size != f.vocab_size {
                return Err(Error::structural(format!(
                    "selection vocab {} does not match feature {} vocab {}",
                    mask.vocab_size, f.feature_id, f.vocab_size
                )));
            }
        }
        Ok(())
    }
}

/// Frequency-filtered vocabulary selection. With the noiseless switch this
/// is exact top-k on the counts (the public path); with a private budget
/// each feature's counts race under Gumbel noise, spending epsilon of pure
/// DP in total.
pub fn dpfest_select(
    counts: &[Vec<u64>],
    k_total: usize,
    noise: SelectionNoise,
    rng: &mut RngStream,
) -> Result<SelectedVocabulary> {
    if k_total == 0 {
        return Err(Error::input("selection budget k must be positive"));
    }
    let selected = dp_topk_multifeature(counts, k_total, noise, rng)?;
    let vocab_sizes: Vec<usize> = counts.iter().map(|c| c.len()).collect();
    SelectedVocabulary::from_feature_rows(&vocab_sizes, selected)
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Mean pre-update binary cross-entropy over the batch.
    pub loss: f64,
    /// Coordinates that received Gaussian noise this step (zero when the
    /// gradient noise multiplier is zero).
    pub noised_coordinate_count: usize,
    /// Embedding rows eligible for update or noise, per feature.
    pub surviving_rows: Vec<usize>,
    pub wall_time: Duration,
}

fn batch_gradients(
    params: &ModelParams,
    batch: &[&Example],
) -> Result<(Vec<PerExampleGradient>, f64)> {
    if batch.is_empty() {
        return Err(Error::input("batch must be non-empty"));
    }
    let mut grads = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for ex in batch {
        let cache = params.forward(ex)?;
        loss += bce_loss(cache.logit, ex.label);
        grads.push(params.backward(ex, &cache));
    }
    Ok((grads, loss / batch.len() as f64))
}

/// Drop embedding rows outside the per-feature masks. Head parts are kept.
fn restrict_gradient(g: &mut PerExampleGradient, masks: &[SurvivalMask]) {
    for (part, mask) in g.embedding.iter_mut().zip(masks) {
        part.rows.retain(|&r, _| mask.contains(r));
    }
}

/// Shared tail of every variant: clip each gradient to `c2`, sum in example
/// order, noise the masked embedding rows and the dense head, scale by 1/B,
/// apply. Draw order is fixed: features in order (rows ascending), then head
/// layers in order (weights row-major, then bias).
fn clip_sum_noise_apply(
    params: &mut ModelParams,
    grads: Vec<PerExampleGradient>,
    masks: &[SurvivalMask],
    c2: f64,
    sigma2: f64,
    lr: f64,
    rng: &mut RngStream,
    loss: f64,
    started: Instant,
) -> Result<StepReport> {
    let b = grads.len() as f64;
    let mut agg = PerExampleGradient::zeros_like(params);
    for g in grads {
        agg.add_assign(&g.clip(c2));
    }
    for (part, mask) in agg.embedding.iter_mut().zip(masks) {
        *part = noise_rows(part, mask, c2, sigma2, rng)?;
    }
    let head_std = noise_std(sigma2, c2);
    if head_std > 0.0 {
        for layer in &mut agg.head {
            for v in &mut layer.weight.data {
                *v += head_std * rng.gaussian();
            }
            for v in &mut layer.bias {
                *v += head_std * rng.gaussian();
            }
        }
    }
    let update = agg.scale(1.0 / b);
    params.apply_update(&update, lr)?;

    let surviving_rows: Vec<usize> = masks.iter().map(|m| m.len()).collect();
    let noised_coordinate_count = if sigma2 > 0.0 {
        masks
            .iter()
            .zip(&params.features)
            .map(|(m, f)| m.len() * f.embedding_dim)
            .sum::<usize>()
            + params.head_param_count()
    } else {
        0
    };
    Ok(StepReport {
        loss,
        noised_coordinate_count,
        surviving_rows,
        wall_time: started.elapsed(),
    })
}

/// Plain minibatch SGD: mean gradient, no clipping, no noise.
pub fn sgd_step(
    params: &mut ModelParams,
    batch: &[&Example],
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepReport> {
    dpsgd_step(params, batch, f64::INFINITY, 0.0, lr, rng)
}

/// One DP-SGD step: per-example clip to `c2`, sum, Gaussian noise on every
/// coordinate, 1/B scale.
pub fn dpsgd_step(
    params: &mut ModelParams,
    batch: &[&Example],
    c2: f64,
    sigma2: f64,
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepReport> {
    let started = Instant::now();
    let (grads, loss) = batch_gradients(params, batch)?;
    let masks: Vec<SurvivalMask> =
        params.features.iter().map(|f| SurvivalMask::full(f.vocab_size)).collect();
    clip_sum_noise_apply(params, grads, &masks, c2, sigma2, lr, rng, loss, started)
}

/// One frequency-filtered step: per-example gradients are restricted to the
/// selected rows before clipping, and only those rows (plus the head) are
/// noised. Non-selected embedding rows stay frozen.
pub fn dpfest_step(
    params: &mut ModelParams,
    batch: &[&Example],
    selected: &SelectedVocabulary,
    c2: f64,
    sigma2: f64,
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepReport> {
    let started = Instant::now();
    selected.check_shapes(&params.features)?;
    let (mut grads, loss) = batch_gradients(params, batch)?;
    for g in &mut grads {
        restrict_gradient(g, &selected.masks);
    }
    clip_sum_noise_apply(params, grads, &selected.masks, c2, sigma2, lr, rng, loss, started)
}

/// One adaptively-filtered step over the full vocabulary.
pub fn adafest_step(
    params: &mut ModelParams,
    batch: &[&Example],
    noise: &NoiseConfig,
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepReport> {
    adafest_plus_step(params, batch, None, noise, lr, rng)
}

/// One adaptively-filtered step, optionally restricted to a pre-selected
/// vocabulary: rows outside `selected` are never surveyed, never trained
/// and never noised. With `None` (or a full selection) this is the plain
/// adaptive variant.
///
/// Phases, in fixed draw order: (1) jointly-clipped activation survey over
/// the eligible rows; (2) per-feature survival masks, thresholded exactly
/// when sigma1 = 0 and otherwise sampled sparsely under the survey noise;
/// (3) per-example gradients, zeroed outside the masks, clipped to c2,
/// summed; (4) Gaussian noise on masked rows and the head; (5) 1/B scale
/// and apply.
pub fn adafest_plus_step(
    params: &mut ModelParams,
    batch: &[&Example],
    selected: Option<&SelectedVocabulary>,
    noise: &NoiseConfig,
    lr: f64,
    rng: &mut RngStream,
) -> Result<StepReport> {
    let started = Instant::now();
    noise.validate()?;
    if let Some(s) = selected {
        s.check_shapes(&params.features)?;
    }
    if batch.is_empty() {
        return Err(Error::input("batch must be non-empty"));
    }
    let universe = selected.map(|s| s.masks.as_slice());
    let maps = contribution_map_within(batch, &params.features, noise.c1, universe)?;
    let mut masks = Vec::with_capacity(maps.len());
    for (f, map) in maps.iter().enumerate() {
        let mask = match universe {
            None => survival_mask(map, noise, rng)?,
            Some(u) => survival_mask_within(map, &u[f], noise, rng)?,
        };
        masks.push(mask);
    }

    let (mut grads, loss) = batch_gradients(params, batch)?;
    for g in &mut grads {
        restrict_gradient(g, &masks);
    }
    clip_sum_noise_apply(params, grads, &masks, noise.c2, noise.sigma2, lr, rng, loss, started)
}

fn survival_mask(
    map: &ContributionMap,
    noise: &NoiseConfig,
    rng: &mut RngStream,
) -> Result<SurvivalMask> {
    if noise.sigma1 == 0.0 {
        Ok(map.threshold(noise.tau))
    } else {
        sample_mask_efficient(map, noise.tau, noise.sigma1, noise.c1, rng)
    }
}

/// Survival sampling with the vocabulary restricted to `universe`: the
/// eligible rows are compacted to a contiguous index space, sampled there,
/// and translated back, so untouched non-selected rows can never be false
/// positives and draw count stays proportional to survivors.
fn survival_mask_within(
    map: &ContributionMap,
    universe: &SurvivalMask,
    noise: &NoiseConfig,
    rng: &mut RngStream,
) -> Result<SurvivalMask> {
    if noise.sigma1 == 0.0 {
        let rows = universe
            .rows
            .iter()
            .copied()
            .filter(|&j| map.value(j) >= noise.tau)
            .collect();
        return Ok(SurvivalMask { vocab_size: map.vocab_size, rows });
    }
    let mut compact = ContributionMap {
        vocab_size: universe.len(),
        entries: std::collections::BTreeMap::new(),
    };
    for (&j, &v) in &map.entries {
        let rank = universe
            .rows
            .binary_search(&j)
            .map_err(|_| Error::structural(format!("surveyed row {j} outside the selection")))?;
        compact.entries.insert(rank, v);
    }
    let sampled =
        sample_mask_efficient(&compact, noise.tau, noise.sigma1, noise.c1, rng)?;
    let rows = sampled.rows.iter().map(|&r| universe.rows[r]).collect();
    Ok(SurvivalMask { vocab_size: map.vocab_size, rows })
}

/// Dispatch one step of the configured algorithm. `selected` is required
/// for the frequency-filtered variants and ignored by the others.
pub fn run_step(
    params: &mut ModelParams,
    batch: &[&Example],
    cfg: &OptimizerConfig,
    selected: Option<&SelectedVocabulary>,
    rng: &mut RngStream,
) -> Result<StepReport> {
    match cfg.algorithm {
        Algorithm::Sgd => sgd_step(params, batch, cfg.lr, rng),
        Algorithm::DpSgd => {
            dpsgd_step(params, batch, cfg.noise.c2, cfg.noise.sigma2, cfg.lr, rng)
        }
        Algorithm::DpFest => {
            let sel = selected.ok_or_else(|| {
                Error::input("frequency-filtered training needs a selected vocabulary")
            })?;
            dpfest_step(params, batch, sel, cfg.noise.c2, cfg.noise.sigma2, cfg.lr, rng)
        }
        Algorithm::AdaFest => adafest_step(params, batch, &cfg.noise, cfg.lr, rng),
        Algorithm::AdaFestPlus => {
            let sel = selected.ok_or_else(|| {
                Error::input("combined filtering needs a selected vocabulary")
            })?;
            adafest_plus_step(params, batch, Some(sel), &cfg.noise, cfg.lr, rng)
        }
    }
}

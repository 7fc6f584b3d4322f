//! Private selection and noising mechanisms.
//!
//! Building blocks shared by the training algorithms: batch contribution
//! maps with joint l2 clipping, Gaussian noising of maps and of row-masked
//! gradients, threshold survival masks, a memory-efficient mask sampler
//! that never materializes per-coordinate noise for untouched coordinates,
//! and one-shot Gumbel top-k selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{Example, FeatureSpec, RowSparseGradient};
use crate::rng::RngStream;

/// Aggregated, clipped bucket contributions of one feature over a batch.
/// Sparse: only buckets activated by the batch appear; others are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMap {
    pub vocab_size: usize,
    pub entries: BTreeMap<usize, f64>,
}

impl ContributionMap {
    pub fn value(&self, j: usize) -> f64 {
        self.entries.get(&j).copied().unwrap_or(0.0)
    }

    /// Noiseless thresholding, implicit zeros included: when `tau <= 0`
    /// every coordinate survives.
    pub fn threshold(&self, tau: f64) -> SurvivalMask {
        if tau <= 0.0 {
            return SurvivalMask::full(self.vocab_size);
        }
        let rows = self
            .entries
            .iter()
            .filter(|(_, &v)| v >= tau)
            .map(|(&j, _)| j)
            .collect();
        SurvivalMask { vocab_size: self.vocab_size, rows }
    }
}

/// A contribution map after per-coordinate Gaussian noising. Dense, since
/// noise touches every coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedContributionMap {
    pub values: Vec<f64>,
}

/// Sorted set of surviving rows of one embedding table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurvivalMask {
    pub vocab_size: usize,
    pub rows: Vec<usize>,
}

impl SurvivalMask {
    pub fn empty(vocab_size: usize) -> Self {
        SurvivalMask { vocab_size, rows: Vec::new() }
    }

    pub fn full(vocab_size: usize) -> Self {
        SurvivalMask { vocab_size, rows: (0..vocab_size).collect() }
    }

    pub fn from_rows(vocab_size: usize, mut rows: Vec<usize>) -> Result<Self> {
        rows.sort_unstable();
        rows.dedup();
        if let Some(&last) = rows.last() {
            if last >= vocab_size {
                return Err(Error::input(format!("mask row {last} exceeds vocab {vocab_size}")));
            }
        }
        Ok(SurvivalMask { vocab_size, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.rows.binary_search(&row).is_ok()
    }

    pub fn is_subset_of(&self, other: &SurvivalMask) -> bool {
        self.rows.iter().all(|&r| other.contains(r))
    }
}

/// Noise and clipping knobs for adaptive filtering: the survey stage
/// (sigma1, c1, tau) and the gradient stage (sigma2, c2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma1: f64,
    pub c1: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub c2: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::input(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2)] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma1 > 0.0 && !self.c1.is_finite() {
            return Err(Error::input("sigma1 > 0 requires a finite c1"));
        }
        if self.sigma2 > 0.0 && !self.c2.is_finite() {
            return Err(Error::input("sigma2 > 0 requires a finite c2"));
        }
        if !self.tau.is_finite() {
            return Err(Error::input("tau must be finite"));
        }
        Ok(())
    }
}

/// Selection noise for top-k: exact counts, or the one-shot Gumbel
/// mechanism with a given epsilon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionNoise {
    /// The epsilon = infinity switch: exact counts, no privacy spent.
    Noiseless,
    /// Gumbel perturbations with scale 1/epsilon.
    Private { epsilon: f64 },
}

/// Budget spent on frequency-based vocabulary selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionBudget {
    pub k: usize,
    pub noise: SelectionNoise,
}

/// Effective noise standard deviation, with the convention that sigma = 0
/// means exactly no noise even when the clip bound is infinite.
#[inline]
pub(crate) fn noise_std(sigma: f64, clip: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * clip
    }
}

/// Aggregated activation survey over a batch. Each example contributes its
/// binary activation indicator, jointly l2-clipped across all features to
/// norm at most `c1` (an example activating m buckets in total contributes
/// min(1, c1/sqrt(m)) to each of them).
pub fn contribution_map(
    batch: &[&Example],
    features: &[FeatureSpec],
    c1: f64,
) -> Result<Vec<ContributionMap>> {
    contribution_map_within(batch, features, c1, None)
}

/// Like [`contribution_map`], but buckets outside the per-feature universe
/// masks are ignored entirely: they do not appear in the output and do not
/// count toward an example's activation total for the joint clip.
pub fn contribution_map_within(
    batch: &[&Example],
    features: &[FeatureSpec],
    c1: f64,
    universe: Option<&[SurvivalMask]>,
) -> Result<Vec<ContributionMap>> {
    if c1.is_nan() || c1 <= 0.0 {
        return Err(Error::input(format!("c1 must be positive, got {c1}")));
    }
    if let Some(masks) = universe {
        if masks.len() != features.len() {
            return Err(Error::structural(format!(
                "universe has {} masks, expected {}",
                masks.len(),
                features.len()
            )));
        }
    }
    let in_universe = |f: usize, b: usize| universe.is_none_or(|masks| masks[f].contains(b));
    let mut maps: Vec<ContributionMap> = features
        .iter()
        .map(|f| ContributionMap { vocab_size: f.vocab_size, entries: BTreeMap::new() })
        .collect();
    for ex in batch {
        if ex.buckets.len() != features.len() {
            return Err(Error::input(format!(
                "example has {} features, expected {}",
                ex.buckets.len(),
                features.len()
            )));
        }
        let mut m = 0usize;
        for (f, list) in ex.buckets.iter().enumerate() {
            for &b in list {
                if b >= features[f].vocab_size {
                    return Err(Error::input(format!(
                        "bucket {b} exceeds vocab {}",
                        features[f].vocab_size
                    )));
                }
                if in_universe(f, b) {
                    m += 1;
                }
            }
        }
        if m == 0 {
            continue;
        }
        let scale = (c1 / (m as f64).sqrt()).min(1.0);
        for (f, (map, list)) in maps.iter_mut().zip(&ex.buckets).enumerate() {
            for &b in list {
                if in_universe(f, b) {
                    *map.entries.entry(b).or_insert(0.0) += scale;
                }
            }
        }
    }
    Ok(maps)
}

/// Add independent N(0, (sigma1*c1)^2) noise to every coordinate of the
/// map, materializing a dense vector. With sigma1 = 0 this densifies the
/// map bit-identically and draws nothing.
pub fn noise_contribution_map(
    map: &ContributionMap,
    c1: f64,
    sigma1: f64,
    rng: &mut RngStream,
) -> Result<NoisedContributionMap> {
    if !sigma1.is_finite() || sigma1 < 0.0 {
        return Err(Error::input(format!("sigma1 must be finite and >= 0, got {sigma1}")));
    }
    if sigma1 > 0.0 && !c1.is_finite() {
        return Err(Error::input("sigma1 > 0 requires a finite c1"));
    }
    let std = noise_std(sigma1, c1);
    let mut values = vec![0.0; map.vocab_size];
    for (&j, &v) in &map.entries {
        values[j] = v;
    }
    if std > 0.0 {
        for v in &mut values {
            *v += std * rng.gaussian();
        }
    }
    Ok(NoisedContributionMap { values })
}

/// Rows whose noised contribution meets the threshold (weak inequality,
/// so ties at tau survive).
pub fn threshold_mask(map: &NoisedContributionMap, tau: f64) -> SurvivalMask {
    let rows = map
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= tau)
        .map(|(j, _)| j)
        .collect();
    SurvivalMask { vocab_size: map.values.len(), rows }
}

/// Sample the survival mask without materializing per-coordinate noise.
///
/// Equivalent in distribution to noising every coordinate and thresholding:
/// an activated coordinate with value v survives with probability
/// P(v + s*Z >= tau) where s = sigma1*c1, and each untouched coordinate
/// survives with the common probability P(s*Z >= tau). Untouched survivors
/// are located by geometric gap sampling, so runtime and draw count are
/// proportional to the activated count plus the number of survivors.
pub fn sample_mask_efficient(
    map: &ContributionMap,
    tau: f64,
    sigma1: f64,
    c1: f64,
    rng: &mut RngStream,
) -> Result<SurvivalMask> {
    if !sigma1.is_finite() || sigma1 < 0.0 {
        return Err(Error::input(format!("sigma1 must be finite and >= 0, got {sigma1}")));
    }
    if c1.is_nan() || c1 <= 0.0 {
        return Err(Error::input(format!("c1 must be positive, got {c1}")));
    }
    if sigma1 > 0.0 && !c1.is_finite() {
        return Err(Error::input("sigma1 > 0 requires a finite c1"));
    }
    if sigma1 == 0.0 {
        return Ok(map.threshold(tau));
    }
    let std = noise_std(sigma1, c1);
    let unit = Normal::new(0.0, 1.0).expect("standard normal");

    // Activated coordinates: one Bernoulli draw each, in index order.
    let mut nonzero_survivors = Vec::new();
    for (&j, &v) in &map.entries {
        let p = unit.sf((tau - v) / std);
        if rng.uniform() < p {
            nonzero_survivors.push(j);
        }
    }

    // Untouched coordinates: geometric gaps through the rank space of
    // zero-valued coordinates, mapped back to actual indices by merging
    // with the sorted activated indices.
    let p0 = unit.sf(tau / std);
    let c_zero = map.vocab_size - map.entries.len();
    let mut zero_survivors = Vec::new();
    if p0 >= 1.0 {
        zero_survivors = (0..c_zero).collect();
    } else if p0 > 0.0 && c_zero > 0 {
        // ln_1p keeps the gap distribution exact when p0 is far below the
        // rounding granularity of 1 - p0.
        let log_q = (-p0).ln_1p();
        let mut pos: i64 = -1;
        loop {
            let u = rng.uniform_open();
            let gap = ((u.ln() / log_q).floor() + 1.0).max(1.0);
            if gap >= (c_zero as i64 - pos) as f64 {
                break;
            }
            pos += gap as i64;
            zero_survivors.push(pos as usize);
        }
    }
    let nz: Vec<usize> = map.entries.keys().copied().collect();
    let mut k = 0usize;
    let mut zero_indices = Vec::with_capacity(zero_survivors.len());
    for r in zero_survivors {
        let mut candidate = r + k;
        while k < nz.len() && nz[k] <= candidate {
            k += 1;
            candidate = r + k;
        }
        zero_indices.push(candidate);
    }

    // Merge the two sorted lists.
    let mut rows = Vec::with_capacity(nonzero_survivors.len() + zero_indices.len());
    let (mut a, mut b) = (0, 0);
    while a < nonzero_survivors.len() || b < zero_indices.len() {
        let take_a = match (nonzero_survivors.get(a), zero_indices.get(b)) {
            (Some(&x), Some(&y)) => x < y,
            (Some(_), None) => true,
            _ => false,
        };
        if take_a {
            rows.push(nonzero_survivors[a]);
            a += 1;
        } else {
            rows.push(zero_indices[b]);
            b += 1;
        }
    }
    Ok(SurvivalMask { vocab_size: map.vocab_size, rows })
}

/// Exact top-k by score, ties broken by lower index. Returns the selected
/// indices in ascending order.
pub fn exact_topk(scores: &[f64], k: usize) -> Vec<usize> {
    if k >= scores.len() {
        return (0..scores.len()).collect();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// One-shot top-k selection over counts. In the private variant each count
/// is perturbed by an independent Gumbel(1/epsilon) draw and the k largest
/// perturbed scores win, which spends epsilon of pure DP for counts with
/// sensitivity one.
pub fn gumbel_topk(
    counts: &[u64],
    k: usize,
    noise: SelectionNoise,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let scores: Vec<f64> = match noise {
        SelectionNoise::Noiseless => counts.iter().map(|&c| c as f64).collect(),
        SelectionNoise::Private { epsilon } => {
            if !epsilon.is_finite() || epsilon <= 0.0 {
                return Err(Error::input(format!(
                    "selection epsilon must be positive and finite, got {epsilon}"
                )));
            }
            let beta = 1.0 / epsilon;
            counts.iter().map(|&c| c as f64 + rng.gumbel(beta)).collect()
        }
    };
    Ok(exact_topk(&scores, k))
}

/// Per-feature top-k selection splitting a global budget: each of the p
/// features gets floor(k/p) slots and, in the private variant, epsilon/p.
pub fn dp_topk_multifeature(
    counts: &[Vec<u64>],
    k_total: usize,
    noise: SelectionNoise,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    let p = counts.len();
    if p == 0 {
        return Err(Error::input("no features to select over"));
    }
    let k_each = k_total / p;
    let per_feature_noise = match noise {
        SelectionNoise::Noiseless => SelectionNoise::Noiseless,
        SelectionNoise::Private { epsilon } => {
            SelectionNoise::Private { epsilon: epsilon / p as f64 }
        }
    };
    counts
        .iter()
        .map(|c| gumbel_topk(c, k_each, per_feature_noise, rng))
        .collect()
}

/// Noise the aggregate gradient on exactly the masked rows: every masked
/// row receives independent N(0, (sigma2*c2)^2) per coordinate, including
/// rows the batch never touched. Rows outside the mask must not appear in
/// the aggregate.
pub fn noise_rows(
    agg: &RowSparseGradient,
    mask: &SurvivalMask,
    c2: f64,
    sigma2: f64,
    rng: &mut RngStream,
) -> Result<RowSparseGradient> {
    if agg.vocab_size != mask.vocab_size {
        return Err(Error::structural(format!(
            "aggregate vocab {} does not match mask vocab {}",
            agg.vocab_size, mask.vocab_size
        )));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::input(format!("sigma2 must be finite and >= 0, got {sigma2}")));
    }
    if sigma2 > 0.0 && !c2.is_finite() {
        return Err(Error::input("sigma2 > 0 requires a finite c2"));
    }
    for &r in agg.rows.keys() {
        if !mask.contains(r) {
            return Err(Error::structural(format!("aggregate row {r} outside the mask")));
        }
    }
    let std = noise_std(sigma2, c2);
    let mut out = RowSparseGradient::empty(agg.vocab_size, agg.dim);
    for &r in &mask.rows {
        let mut row = match agg.rows.get(&r) {
            Some(v) => v.clone(),
            None => vec![0.0; agg.dim],
        };
        if std > 0.0 {
            for v in &mut row {
                *v += std * rng.gaussian();
            }
        }
        out.rows.insert(r, row);
    }
    Ok(out)
}

//! Shared fixtures for the update and mask-sampling benches.

use std::collections::BTreeMap;

use dpsparse_core::mechanisms::ContributionMap;
use dpsparse_core::rng::{RngStream, StreamPurpose};

/// A contribution map with `nnz` activated buckets spread over the
/// vocabulary, values decaying from `top` like a frequency head.
pub fn synthetic_map(vocab: usize, nnz: usize, top: f64) -> ContributionMap {
    assert!(nnz <= vocab);
    let mut entries = BTreeMap::new();
    let stride = vocab / nnz.max(1);
    for i in 0..nnz {
        let j = i * stride;
        let v = top / (1.0 + i as f64).sqrt();
        entries.insert(j, v);
    }
    ContributionMap { vocab_size: vocab, entries }
}

/// Distinct sorted row indices standing in for a minibatch's touched rows.
pub fn touched_rows(vocab: usize, batch: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = RngStream::new(seed, StreamPurpose::Sampling);
    let mut rows: Vec<usize> =
        (0..batch).map(|_| rng.inner().random_range(0..vocab)).collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

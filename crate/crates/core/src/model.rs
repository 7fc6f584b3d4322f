//! Sparse embedding model with exact per-example gradients.
//!
//! The model embeds categorical features through per-feature lookup tables,
//! concatenates pooled embeddings with numeric inputs, and scores the result
//! with a small fixed ReLU head ending in a single logit. Gradients with
//! respect to embedding tables are row-sparse: only rows of activated
//! buckets ever appear, and they are produced by gather/scatter, never by a
//! dense one-hot product.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Hidden layer widths of the scoring head.
pub const HEAD_HIDDEN: [usize; 2] = [64, 64];

/// How multiple activated buckets of one feature combine into one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Sum,
    Mean,
}

/// Shape of one categorical feature's embedding table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: usize,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub pooling: Pooling,
}

/// One training example. Numeric values are stored post-transform
/// (log1p is applied at ingestion) and bucket lists are sorted and
/// deduplicated per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: u8,
    pub numeric: Vec<f64>,
    pub buckets: Vec<Vec<usize>>,
}

impl Example {
    /// Ingest a raw example: validates the label, log1p-transforms numeric
    /// values, and sorts/deduplicates bucket lists. Every feature must
    /// activate at least one bucket.
    pub fn new(label: u8, raw_numeric: Vec<f64>, buckets: Vec<Vec<usize>>) -> Result<Self> {
        if label > 1 {
            return Err(Error::input(format!("label must be 0 or 1, got {label}")));
        }
        let mut numeric = Vec::with_capacity(raw_numeric.len());
        for v in raw_numeric {
            if !v.is_finite() || v <= -1.0 {
                return Err(Error::input(format!("numeric value {v} outside log1p domain")));
            }
            numeric.push(v.ln_1p());
        }
        let mut cleaned = Vec::with_capacity(buckets.len());
        for (f, mut list) in buckets.into_iter().enumerate() {
            if list.is_empty() {
                return Err(Error::input(format!("feature {f} has no activated bucket")));
            }
            list.sort_unstable();
            list.dedup();
            cleaned.push(list);
        }
        Ok(Example { label, numeric, buckets: cleaned })
    }

    /// Total number of activated buckets across all features.
    pub fn activated_count(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

/// Dense row-major matrix used for tables and head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = W x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            y[i] = acc;
        }
        y
    }

    /// y = W^T x
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (acc, w) in y.iter_mut().zip(row) {
                *acc += w * xi;
            }
        }
        y
    }
}

/// One dense layer of the head.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Full parameter set: one table per feature plus the dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub features: Vec<FeatureSpec>,
    pub n_numeric: usize,
    pub tables: Vec<Matrix>,
    pub head: Vec<DenseLayer>,
}

impl ModelParams {
    /// Random initialization: embedding rows uniform in (-1/sqrt(d), 1/sqrt(d)),
    /// dense weights and biases uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(features: Vec<FeatureSpec>, n_numeric: usize, rng: &mut RngStream) -> Self {
        let mut tables = Vec::with_capacity(features.len());
        for spec in &features {
            let mut t = Matrix::zeros(spec.vocab_size, spec.embedding_dim);
            let bound = 1.0 / (spec.embedding_dim as f64).sqrt();
            for v in &mut t.data {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
            tables.push(t);
        }
        let input_dim = n_numeric + features.iter().map(|f| f.embedding_dim).sum::<usize>();
        let widths = [input_dim, HEAD_HIDDEN[0], HEAD_HIDDEN[1], 1];
        let mut head = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in &mut weight.data {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
            let mut bias = vec![0.0; fan_out];
            for v in &mut bias {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
            head.push(DenseLayer { weight, bias });
        }
        ModelParams { features, n_numeric, tables, head }
    }

    /// Zero-valued parameters with the same shapes as `init` would produce.
    pub fn zeros(features: Vec<FeatureSpec>, n_numeric: usize) -> Self {
        let tables = features
            .iter()
            .map(|f| Matrix::zeros(f.vocab_size, f.embedding_dim))
            .collect();
        let input_dim = n_numeric + features.iter().map(|f| f.embedding_dim).sum::<usize>();
        let widths = [input_dim, HEAD_HIDDEN[0], HEAD_HIDDEN[1], 1];
        let head = (0..widths.len() - 1)
            .map(|l| DenseLayer {
                weight: Matrix::zeros(widths[l + 1], widths[l]),
                bias: vec![0.0; widths[l + 1]],
            })
            .collect();
        ModelParams { features, n_numeric, tables, head }
    }

    pub fn head_input_dim(&self) -> usize {
        self.n_numeric + self.features.iter().map(|f| f.embedding_dim).sum::<usize>()
    }

    /// Total parameter count, embedding tables plus head.
    pub fn param_count(&self) -> usize {
        self.embedding_param_count() + self.head_param_count()
    }

    pub fn embedding_param_count(&self) -> usize {
        self.tables.iter().map(|t| t.data.len()).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.head.iter().map(|l| l.weight.data.len() + l.bias.len()).sum()
    }

    fn validate_example(&self, ex: &Example) -> Result<()> {
        if ex.numeric.len() != self.n_numeric {
            return Err(Error::input(format!(
                "example has {} numeric values, model expects {}",
                ex.numeric.len(),
                self.n_numeric
            )));
        }
        if ex.buckets.len() != self.features.len() {
            return Err(Error::input(format!(
                "example has {} features, model expects {}",
                ex.buckets.len(),
                self.features.len()
            )));
        }
        for (spec, list) in self.features.iter().zip(&ex.buckets) {
            if let Some(&b) = list.last() {
                if b >= spec.vocab_size {
                    return Err(Error::input(format!(
                        "bucket {b} out of range for feature {} (vocab {})",
                        spec.feature_id, spec.vocab_size
                    )));
                }
            }
        }
        Ok(())
    }

    /// Forward pass. Embedding lookups are gathers over activated rows only.
    pub fn forward(&self, ex: &Example) -> Result<ForwardCache> {
        self.validate_example(ex)?;
        let mut pooled = Vec::with_capacity(self.features.len());
        for (f, spec) in self.features.iter().enumerate() {
            let table = &self.tables[f];
            let list = &ex.buckets[f];
            let mut z = vec![0.0; spec.embedding_dim];
            for &b in list {
                for (acc, v) in z.iter_mut().zip(table.row(b)) {
                    *acc += v;
                }
            }
            if spec.pooling == Pooling::Mean {
                let inv = 1.0 / list.len() as f64;
                for v in &mut z {
                    *v *= inv;
                }
            }
            pooled.push(z);
        }
        let mut input = Vec::with_capacity(self.head_input_dim());
        input.extend_from_slice(&ex.numeric);
        for z in &pooled {
            input.extend_from_slice(z);
        }

        let mut pre = Vec::with_capacity(self.head.len());
        let mut act = Vec::with_capacity(self.head.len());
        let mut cur = input.clone();
        for (l, layer) in self.head.iter().enumerate() {
            let mut a = layer.weight.matvec(&cur);
            for (v, b) in a.iter_mut().zip(&layer.bias) {
                *v += b;
            }
            let h = if l + 1 < self.head.len() {
                a.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                a.clone()
            };
            pre.push(a);
            cur = h.clone();
            act.push(h);
        }
        let logit = pre.last().unwrap()[0];
        if !logit.is_finite() {
            return Err(Error::numeric("non-finite logit in forward pass"));
        }
        Ok(ForwardCache { pooled, input, pre, act, logit })
    }

    /// Gradient of the binary cross-entropy objective for one example.
    /// Embedding parts contain exactly the rows of activated buckets.
    pub fn per_example_gradient(&self, ex: &Example) -> Result<PerExampleGradient> {
        let cache = self.forward(ex)?;
        Ok(self.backward(ex, &cache))
    }

    /// Backward pass from a cached forward. Row-sparse on embedding tables.
    pub fn backward(&self, ex: &Example, cache: &ForwardCache) -> PerExampleGradient {
        let n_layers = self.head.len();
        let mut head_grads: Vec<LayerGrad> = Vec::with_capacity(n_layers);
        // dL/dlogit for the sigmoid + cross-entropy composite.
        let mut delta = vec![sigmoid(cache.logit) - ex.label as f64];
        for l in (0..n_layers).rev() {
            let layer = &self.head[l];
            let input = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            let mut wg = Matrix::zeros(layer.weight.rows, layer.weight.cols);
            for (i, &d) in delta.iter().enumerate() {
                let row = wg.row_mut(i);
                for (slot, v) in row.iter_mut().zip(input) {
                    *slot = d * v;
                }
            }
            head_grads.push(LayerGrad { weight: wg, bias: delta.clone() });
            let mut back = layer.weight.t_matvec(&delta);
            if l > 0 {
                for (v, a) in back.iter_mut().zip(&cache.pre[l - 1]) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = back;
        }
        head_grads.reverse();
        // delta now holds dL/d(input); slice off the per-feature segments.
        let mut embedding = Vec::with_capacity(self.features.len());
        let mut offset = self.n_numeric;
        for (f, spec) in self.features.iter().enumerate() {
            let dz = &delta[offset..offset + spec.embedding_dim];
            offset += spec.embedding_dim;
            let list = &ex.buckets[f];
            let scale = match spec.pooling {
                Pooling::Sum => 1.0,
                Pooling::Mean => 1.0 / list.len() as f64,
            };
            let mut rows = BTreeMap::new();
            for &b in list {
                let row: Vec<f64> = dz.iter().map(|&v| v * scale).collect();
                rows.insert(b, row);
            }
            embedding.push(RowSparseGradient {
                vocab_size: spec.vocab_size,
                dim: spec.embedding_dim,
                rows,
            });
        }
        PerExampleGradient { embedding, head: head_grads }
    }

    /// Subtract `lr * update` from the parameters. Only rows present in the
    /// update are written.
    pub fn apply_update(&mut self, update: &PerExampleGradient, lr: f64) -> Result<()> {
        if update.embedding.len() != self.features.len() {
            return Err(Error::structural(format!(
                "update has {} embedding parts, model has {} features",
                update.embedding.len(),
                self.features.len()
            )));
        }
        if update.head.len() != self.head.len() {
            return Err(Error::structural("head layer count mismatch"));
        }
        for (part, table) in update.embedding.iter().zip(&self.tables) {
            if part.vocab_size != table.rows || part.dim != table.cols {
                return Err(Error::structural(format!(
                    "embedding part shape {}x{} does not match table {}x{}",
                    part.vocab_size, part.dim, table.rows, table.cols
                )));
            }
            if let Some((&r, _)) = part.rows.last_key_value() {
                if r >= table.rows {
                    return Err(Error::structural(format!("row {r} out of table range")));
                }
            }
        }
        for (g, l) in update.head.iter().zip(&self.head) {
            if g.weight.rows != l.weight.rows
                || g.weight.cols != l.weight.cols
                || g.bias.len() != l.bias.len()
            {
                return Err(Error::structural("head gradient shape mismatch"));
            }
        }
        for (part, table) in update.embedding.iter().zip(self.tables.iter_mut()) {
            for (&r, vec) in &part.rows {
                for (slot, v) in table.row_mut(r).iter_mut().zip(vec) {
                    *slot -= lr * v;
                }
            }
        }
        for (g, l) in update.head.iter().zip(self.head.iter_mut()) {
            for (slot, v) in l.weight.data.iter_mut().zip(&g.weight.data) {
                *slot -= lr * v;
            }
            for (slot, v) in l.bias.iter_mut().zip(&g.bias) {
                *slot -= lr * v;
            }
        }
        Ok(())
    }
}

/// Cached activations from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub pooled: Vec<Vec<f64>>,
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Row-sparse gradient of one embedding table: ordered map from row index
/// to a dense d-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSparseGradient {
    pub vocab_size: usize,
    pub dim: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl RowSparseGradient {
    pub fn empty(vocab_size: usize, dim: usize) -> Self {
        RowSparseGradient { vocab_size, dim, rows: BTreeMap::new() }
    }

    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        for vec in self.rows.values() {
            for &v in vec {
                acc += v * v;
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.vocab_size, self.dim);
        for (&r, vec) in &self.rows {
            m.row_mut(r).copy_from_slice(vec);
        }
        m
    }
}

/// Gradient of one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// A full per-example gradient (or any object of the same shape, such as a
/// clipped batch aggregate or a noised update).
#[derive(Clone, Debug, PartialEq)]
pub struct PerExampleGradient {
    pub embedding: Vec<RowSparseGradient>,
    pub head: Vec<LayerGrad>,
}

impl PerExampleGradient {
    /// Zero-row gradient matching the model's shapes, with no embedding rows
    /// and zeroed head parts.
    pub fn zeros_like(params: &ModelParams) -> Self {
        let embedding = params
            .features
            .iter()
            .map(|f| RowSparseGradient::empty(f.vocab_size, f.embedding_dim))
            .collect();
        let head = params
            .head
            .iter()
            .map(|l| LayerGrad {
                weight: Matrix::zeros(l.weight.rows, l.weight.cols),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        PerExampleGradient { embedding, head }
    }

    /// Squared global l2 norm over embedding rows and head parts.
    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        for part in &self.embedding {
            acc += part.sq_norm();
        }
        for layer in &self.head {
            for &v in &layer.weight.data {
                acc += v * v;
            }
            for &v in &layer.bias {
                acc += v * v;
            }
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for part in &mut self.embedding {
            for vec in part.rows.values_mut() {
                for v in vec {
                    *v *= s;
                }
            }
        }
        for layer in &mut self.head {
            for v in &mut layer.weight.data {
                *v *= s;
            }
            for v in &mut layer.bias {
                *v *= s;
            }
        }
    }

    /// Squared norm the gradient would have after scaling by `s`, evaluated
    /// with the exact same operation order as scale_in_place + sq_norm.
    fn scaled_sq_norm(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for part in &self.embedding {
            for vec in part.rows.values() {
                for &v in vec {
                    let w = v * s;
                    acc += w * w;
                }
            }
        }
        for layer in &self.head {
            for &v in &layer.weight.data {
                let w = v * s;
                acc += w * w;
            }
            for &v in &layer.bias {
                let w = v * s;
                acc += w * w;
            }
        }
        acc
    }

    /// Clip to global l2 norm at most `c`. Gradients already within the ball
    /// are returned bit-identical, which also makes clipping idempotent. The
    /// scale factor is nudged down by ulps until the rescaled norm is really
    /// within the ball, so the bound holds exactly in floating point.
    pub fn clip(mut self, c: f64) -> Self {
        let n2 = self.sq_norm();
        if !(n2 > c * c) {
            return self;
        }
        let mut s = c / n2.sqrt();
        while self.scaled_sq_norm(s) > c * c {
            s = s.next_down();
        }
        self.scale_in_place(s);
        self
    }

    /// Add `other` into self. Shapes must match; missing rows are inserted.
    pub fn add_assign(&mut self, other: &PerExampleGradient) {
        for (dst, src) in self.embedding.iter_mut().zip(&other.embedding) {
            for (&r, vec) in &src.rows {
                match dst.rows.get_mut(&r) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(vec) {
                            *a += v;
                        }
                    }
                    None => {
                        dst.rows.insert(r, vec.clone());
                    }
                }
            }
        }
        for (dst, src) in self.head.iter_mut().zip(&other.head) {
            for (a, v) in dst.weight.data.iter_mut().zip(&src.weight.data) {
                *a += v;
            }
            for (a, v) in dst.bias.iter_mut().zip(&src.bias) {
                *a += v;
            }
        }
    }

    /// Multiply every stored coordinate by `s` (used for the 1/B step scale).
    pub fn scale(mut self, s: f64) -> Self {
        self.scale_in_place(s);
        self
    }

    /// Rows present per feature.
    pub fn row_counts(&self) -> Vec<usize> {
        self.embedding.iter().map(|p| p.rows.len()).collect()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from a raw logit.
pub fn bce_loss(logit: f64, label: u8) -> f64 {
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    softplus - label as f64 * logit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamPurpose;
    use proptest::prelude::*;

    fn spec(id: usize, vocab: usize, dim: usize, pooling: Pooling) -> FeatureSpec {
        FeatureSpec { feature_id: id, vocab_size: vocab, embedding_dim: dim, pooling }
    }

    fn small_params(seed: u64) -> ModelParams {
        let feats = vec![spec(0, 10, 3, Pooling::Sum), spec(1, 8, 2, Pooling::Mean)];
        let mut rng = RngStream::new(seed, StreamPurpose::Init);
        ModelParams::init(feats, 2, &mut rng)
    }

    fn small_example() -> Example {
        Example::new(1, vec![0.5, 2.0], vec![vec![2, 7], vec![1, 4, 6]]).unwrap()
    }

    #[test]
    fn ingestion_sorts_dedups_and_transforms() {
        let ex = Example::new(0, vec![0.0, 1.0], vec![vec![5, 2, 5]]).unwrap();
        assert_eq!(ex.buckets[0], vec![2, 5]);
        assert_eq!(ex.numeric[0], 0.0);
        assert!((ex.numeric[1] - 2.0f64.ln()).abs() < 1e-15);
        assert!(Example::new(2, vec![], vec![vec![0]]).is_err());
        assert!(Example::new(0, vec![], vec![vec![]]).is_err());
        assert!(Example::new(0, vec![-1.5], vec![vec![0]]).is_err());
    }

    #[test]
    fn zero_params_logit_is_output_bias() {
        let feats = vec![spec(0, 4, 2, Pooling::Sum)];
        let mut params = ModelParams::zeros(feats, 1);
        params.head[2].bias[0] = 0.7;
        let ex = Example::new(0, vec![3.0], vec![vec![1]]).unwrap();
        let cache = params.forward(&ex).unwrap();
        assert_eq!(cache.logit, 0.7);
    }

    #[test]
    fn single_table_identity_head_reads_row() {
        // Table [1, 2, 3] with a head wired to pass the first input through.
        let feats = vec![spec(0, 3, 1, Pooling::Sum)];
        let mut params = ModelParams::zeros(feats, 0);
        params.tables[0].data = vec![1.0, 2.0, 3.0];
        params.head[0].weight.set(0, 0, 1.0);
        params.head[1].weight.set(0, 0, 1.0);
        params.head[2].weight.set(0, 0, 1.0);
        let ex = Example::new(0, vec![], vec![vec![1]]).unwrap();
        let cache = params.forward(&ex).unwrap();
        assert_eq!(cache.logit, 2.0);
    }

    #[test]
    fn out_of_range_bucket_is_input_error() {
        let params = small_params(1);
        let ex = Example::new(0, vec![0.0, 0.0], vec![vec![10], vec![0]]).unwrap();
        assert!(matches!(params.forward(&ex), Err(Error::Input(_))));
    }

    /// Dense one-hot reference: pooled vector computed as W^T x with an
    /// explicit length-c indicator vector.
    fn dense_pooled(table: &Matrix, list: &[usize], pooling: Pooling) -> Vec<f64> {
        let mut x = vec![0.0; table.rows];
        let w = match pooling {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / list.len() as f64,
        };
        for &b in list {
            x[b] = w;
        }
        table.t_matvec(&x)
    }

    #[test]
    fn forward_matches_dense_onehot_reference() {
        let feats = vec![spec(0, 20, 4, Pooling::Sum), spec(1, 20, 4, Pooling::Mean)];
        let mut rng = RngStream::new(9, StreamPurpose::Init);
        let params = ModelParams::init(feats, 3, &mut rng);
        let examples = [
            Example::new(1, vec![0.1, 0.2, 0.3], vec![vec![0, 3, 19], vec![7]]).unwrap(),
            Example::new(0, vec![1.0, 0.0, 2.5], vec![vec![11], vec![2, 4, 8, 15]]).unwrap(),
        ];
        for ex in &examples {
            let cache = params.forward(ex).unwrap();
            for (f, springs) in params.features.iter().enumerate() {
                let reference = dense_pooled(&params.tables[f], &ex.buckets[f], springs.pooling);
                for (a, b) in cache.pooled[f].iter().zip(&reference) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradient_rows_are_exactly_activated_buckets() {
        let params = small_params(3);
        let ex = Example::new(1, vec![0.0, 0.0], vec![vec![2, 5], vec![3]]).unwrap();
        let g = params.per_example_gradient(&ex).unwrap();
        let rows0: Vec<usize> = g.embedding[0].rows.keys().copied().collect();
        let rows1: Vec<usize> = g.embedding[1].rows.keys().copied().collect();
        assert_eq!(rows0, vec![2, 5]);
        assert_eq!(rows1, vec![3]);
    }

    /// Flattened mutable view over every parameter, for finite differencing.
    fn param_slots(params: &mut ModelParams) -> Vec<*mut f64> {
        let mut slots = Vec::new();
        for t in &mut params.tables {
            for v in &mut t.data {
                slots.push(v as *mut f64);
            }
        }
        for l in &mut params.head {
            for v in &mut l.weight.data {
                slots.push(v as *mut f64);
            }
            for v in &mut l.bias {
                slots.push(v as *mut f64);
            }
        }
        slots
    }

    fn flatten_gradient(params: &ModelParams, g: &PerExampleGradient) -> Vec<f64> {
        let mut flat = Vec::new();
        for (part, table) in g.embedding.iter().zip(&params.tables) {
            let dense = part.to_dense();
            assert_eq!(dense.data.len(), table.data.len());
            flat.extend_from_slice(&dense.data);
        }
        for l in &g.head {
            flat.extend_from_slice(&l.weight.data);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut params = small_params(42);
        let ex = small_example();
        let analytic = flatten_gradient(&params, &params.per_example_gradient(&ex).unwrap());
        let slots = param_slots(&mut params);
        assert_eq!(slots.len(), analytic.len());
        let h = 1e-5;
        for (i, &slot) in slots.iter().enumerate() {
            let orig = unsafe { *slot };
            unsafe { *slot = orig + h };
            let up = bce_loss(params.forward(&ex).unwrap().logit, ex.label);
            unsafe { *slot = orig - h };
            let down = bce_loss(params.forward(&ex).unwrap().logit, ex.label);
            unsafe { *slot = orig };
            let fd = (up - down) / (2.0 * h);
            let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
            assert!(err < 1e-5, "param {i}: analytic {} vs fd {fd}", analytic[i]);
        }
    }

    #[test]
    fn disjoint_examples_sum_to_union_of_rows() {
        let params = small_params(5);
        let a = Example::new(1, vec![0.0, 0.0], vec![vec![1], vec![2]]).unwrap();
        let b = Example::new(0, vec![0.0, 0.0], vec![vec![6], vec![7]]).unwrap();
        let mut sum = params.per_example_gradient(&a).unwrap();
        sum.add_assign(&params.per_example_gradient(&b).unwrap());
        let rows0: Vec<usize> = sum.embedding[0].rows.keys().copied().collect();
        assert_eq!(rows0, vec![1, 6]);
        let ga = params.per_example_gradient(&a).unwrap();
        for k in 0..3 {
            assert_eq!(sum.embedding[0].rows[&1][k], ga.embedding[0].rows[&1][k]);
        }
    }

    fn grad_bits(g: &PerExampleGradient) -> Vec<u64> {
        let mut bits = Vec::new();
        for part in &g.embedding {
            for (&r, vec) in &part.rows {
                bits.push(r as u64);
                bits.extend(vec.iter().map(|v| v.to_bits()));
            }
        }
        for l in &g.head {
            bits.extend(l.weight.data.iter().map(|v| v.to_bits()));
            bits.extend(l.bias.iter().map(|v| v.to_bits()));
        }
        bits
    }

    #[test]
    fn clip_leaves_small_gradients_bit_identical() {
        let params = small_params(7);
        let g = params.per_example_gradient(&small_example()).unwrap();
        let norm = g.l2_norm();
        let clipped = g.clone().clip(norm * 2.0);
        assert_eq!(grad_bits(&g), grad_bits(&clipped));
        let unclipped_inf = g.clone().clip(f64::INFINITY);
        assert_eq!(grad_bits(&g), grad_bits(&unclipped_inf));
    }

    #[test]
    fn clip_three_four_at_two_point_five() {
        let mut g = PerExampleGradient {
            embedding: vec![RowSparseGradient::empty(4, 2)],
            head: vec![],
        };
        g.embedding[0].rows.insert(1, vec![3.0, 4.0]);
        let clipped = g.clip(2.5);
        let row = &clipped.embedding[0].rows[&1];
        assert_eq!(row[0], 1.5);
        assert_eq!(row[1], 2.0);
    }

    #[test]
    fn clip_norm_is_min_of_norm_and_bound() {
        let params = small_params(11);
        for (i, c) in [0.1, 0.5, 1.0, 5.0].into_iter().enumerate() {
            let mut rng = RngStream::new(100 + i as u64, StreamPurpose::Init);
            let mut ex_params = params.clone();
            for t in &mut ex_params.tables {
                for v in &mut t.data {
                    *v = rng.gaussian();
                }
            }
            let g = ex_params.per_example_gradient(&small_example()).unwrap();
            let expected = g.l2_norm().min(c);
            let clipped = g.clip(c);
            assert!((clipped.l2_norm() - expected).abs() < 1e-12);
            assert!(clipped.sq_norm() <= c * c, "norm bound must hold exactly");
        }
    }

    #[test]
    fn clip_is_idempotent_bitwise() {
        let params = small_params(13);
        let g = params.per_example_gradient(&small_example()).unwrap();
        for c in [0.01, 0.3, 1.0] {
            let once = g.clone().clip(c);
            let twice = once.clone().clip(c);
            assert_eq!(grad_bits(&once), grad_bits(&twice));
        }
    }

    #[test]
    fn clip_preserves_sparsity_pattern() {
        let params = small_params(17);
        let g = params.per_example_gradient(&small_example()).unwrap();
        let before: Vec<Vec<usize>> = g
            .embedding
            .iter()
            .map(|p| p.rows.keys().copied().collect())
            .collect();
        let clipped = g.clip(1e-3);
        let after: Vec<Vec<usize>> = clipped
            .embedding
            .iter()
            .map(|p| p.rows.keys().copied().collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn apply_empty_update_is_noop() {
        let mut params = small_params(19);
        let before = params.clone();
        let update = PerExampleGradient::zeros_like(&params);
        params.apply_update(&update, 0.5).unwrap();
        for (a, b) in params.tables.iter().zip(&before.tables) {
            let eq = a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(eq);
        }
    }

    #[test]
    fn apply_touches_only_present_rows() {
        let mut params = small_params(23);
        let before = params.clone();
        let mut update = PerExampleGradient::zeros_like(&params);
        update.embedding[0].rows.insert(1, vec![1.0, 1.0, 1.0]);
        update.embedding[0].rows.insert(3, vec![2.0, 2.0, 2.0]);
        params.apply_update(&update, 0.1).unwrap();
        for r in 0..10 {
            let changed = params.tables[0].row(r) != before.tables[0].row(r);
            assert_eq!(changed, r == 1 || r == 3, "row {r}");
        }
    }

    #[test]
    fn apply_matches_densified_subtraction() {
        let mut params = small_params(29);
        let reference = params.clone();
        let g = params.per_example_gradient(&small_example()).unwrap();
        let lr = 0.25;
        params.apply_update(&g, lr).unwrap();
        for (f, part) in g.embedding.iter().enumerate() {
            let dense = part.to_dense();
            for i in 0..dense.data.len() {
                let expected = reference.tables[f].data[i] - lr * dense.data[i];
                assert!((params.tables[f].data[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_shape_mismatch_is_structural_error() {
        let mut params = small_params(31);
        let mut update = PerExampleGradient::zeros_like(&params);
        update.embedding[0].dim = 7;
        assert!(matches!(params.apply_update(&update, 0.1), Err(Error::Structural(_))));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = small_params(77);
        let b = small_params(77);
        let c = small_params(78);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn clip_bound_holds_for_random_gradients(
            vals in proptest::collection::vec(-1e3f64..1e3, 1..40),
            c in 1e-3f64..10.0,
        ) {
            let mut g = PerExampleGradient {
                embedding: vec![RowSparseGradient::empty(64, 1)],
                head: vec![],
            };
            for (i, v) in vals.iter().enumerate() {
                g.embedding[0].rows.insert(i, vec![*v]);
            }
            let clipped = g.clone().clip(c);
            prop_assert!(clipped.sq_norm() <= c * c);
            let again = clipped.clone().clip(c);
            prop_assert_eq!(grad_bits(&clipped), grad_bits(&again));
        }
    }
}

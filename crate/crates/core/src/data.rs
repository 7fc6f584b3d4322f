//! Synthetic click-through-style datasets: Zipf-distributed categorical
//! features, exponential numeric features, labels from a planted logistic
//! teacher concentrated on the frequent buckets, optional concept drift,
//! and the CSV format shared with the command-line tools.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, Example, FeatureSpec, Pooling};
use crate::rng::{RngStream, StreamPurpose};

fn default_zipf() -> f64 {
    1.5
}

fn default_hot() -> usize {
    20
}

fn default_teacher_scale() -> f64 {
    3.0
}

fn default_periods() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGenSpec {
    pub vocab_size: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_examples: usize,
    pub n_numeric: usize,
    pub features: Vec<FeatureGenSpec>,
    /// Buckets per feature carrying teacher weight; always the most
    /// frequent ones, so learnable signal sits where filtering looks.
    #[serde(default = "default_hot")]
    pub hot_buckets_per_feature: usize,
    #[serde(default = "default_teacher_scale")]
    pub teacher_scale: f64,
    #[serde(default = "default_periods")]
    pub period_count: usize,
    /// First period whose bucket identities are cyclically shifted by half
    /// the vocabulary, simulating concept drift in the id space.
    #[serde(default)]
    pub drift_period: Option<usize>,
    pub seed: u64,
}

impl DatasetSpec {
    /// Desk-scale default: 5 features of 20k buckets each (100k total),
    /// 4 numeric features, 50k examples.
    pub fn desk_default(seed: u64) -> Self {
        DatasetSpec {
            n_examples: 50_000,
            n_numeric: 4,
            features: vec![
                FeatureGenSpec { vocab_size: 20_000, zipf_exponent: default_zipf() };
                5
            ],
            hot_buckets_per_feature: default_hot(),
            teacher_scale: default_teacher_scale(),
            period_count: 1,
            drift_period: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::input("n_examples must be at least 1"));
        }
        if self.features.is_empty() {
            return Err(Error::input("at least one categorical feature is required"));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.vocab_size == 0 {
                return Err(Error::input(format!("feature {i} has empty vocabulary")));
            }
            if !f.zipf_exponent.is_finite() || f.zipf_exponent < 0.0 {
                return Err(Error::input(format!(
                    "feature {i} Zipf exponent must be finite and >= 0, got {}",
                    f.zipf_exponent
                )));
            }
            if self.hot_buckets_per_feature > f.vocab_size {
                return Err(Error::input(format!(
                    "{} hot buckets exceed feature {i} vocabulary {}",
                    self.hot_buckets_per_feature, f.vocab_size
                )));
            }
        }
        if self.period_count == 0 || self.period_count > self.n_examples {
            return Err(Error::input(format!(
                "period_count {} must be in [1, n_examples]",
                self.period_count
            )));
        }
        if let Some(d) = self.drift_period {
            if d == 0 || d >= self.period_count {
                return Err(Error::input(format!(
                    "drift_period {d} must be in [1, period_count)"
                )));
            }
        }
        if !self.teacher_scale.is_finite() || self.teacher_scale < 0.0 {
            return Err(Error::input("teacher_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// An in-memory dataset: ingested examples plus the feature geometry
/// needed to build a model over them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab_sizes: Vec<usize>,
    pub n_numeric: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn feature_specs(&self, embedding_dim: usize) -> Vec<FeatureSpec> {
        self.vocab_sizes
            .iter()
            .enumerate()
            .map(|(i, &c)| FeatureSpec {
                feature_id: i,
                vocab_size: c,
                embedding_dim,
                pooling: Pooling::Sum,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Split into a training prefix and evaluation suffix.
    pub fn split(&self, eval_fraction: f64) -> Result<(&[Example], &[Example])> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::input(format!(
                "eval fraction must be in [0, 1), got {eval_fraction}"
            )));
        }
        let n_eval = (self.examples.len() as f64 * eval_fraction).round() as usize;
        let n_train = self.examples.len() - n_eval;
        if n_train == 0 {
            return Err(Error::input("split leaves no training examples"));
        }
        Ok(self.examples.split_at(n_train))
    }
}

/// Contiguous near-equal partition of n items into s periods.
pub fn period_ranges(n: usize, s: usize) -> Vec<Range<usize>> {
    (0..s).map(|j| (j * n / s)..((j + 1) * n / s)).collect()
}

/// Occurrences of each bucket per feature, one count per listed activation.
pub fn bucket_counts(examples: &[Example], vocab_sizes: &[usize]) -> Result<Vec<Vec<u64>>> {
    let mut counts: Vec<Vec<u64>> = vocab_sizes.iter().map(|&c| vec![0; c]).collect();
    for ex in examples {
        if ex.buckets.len() != vocab_sizes.len() {
            return Err(Error::structural(format!(
                "example has {} features, expected {}",
                ex.buckets.len(),
                vocab_sizes.len()
            )));
        }
        for (per_feature, list) in counts.iter_mut().zip(&ex.buckets) {
            for &b in list {
                if b >= per_feature.len() {
                    return Err(Error::input(format!("bucket {b} out of range")));
                }
                per_feature[b] += 1;
            }
        }
    }
    Ok(counts)
}

/// The planted label model: logistic over the hot buckets of each feature
/// plus a linear term on the transformed numeric features.
#[derive(Clone, Debug)]
pub struct Teacher {
    /// Bucket id -> weight, per feature; only hot buckets are present.
    pub hot_weights: Vec<Vec<(usize, f64)>>,
    pub numeric_weights: Vec<f64>,
}

impl Teacher {
    /// Logit of an example given its semantic (pre-drift) bucket ids and
    /// transformed numeric values.
    pub fn logit(&self, semantic_buckets: &[usize], numeric: &[f64]) -> f64 {
        let mut z = 0.0;
        for (weights, &b) in self.hot_weights.iter().zip(semantic_buckets) {
            for &(hot, w) in weights {
                if hot == b {
                    z += w;
                }
            }
        }
        for (w, x) in self.numeric_weights.iter().zip(numeric) {
            z += w * x;
        }
        z
    }
}

/// Everything the generator decided: the data itself, the teacher, and the
/// teacher's logit for every generated example (in order).
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub teacher: Teacher,
    pub teacher_logits: Vec<f64>,
}

struct Generator {
    spec: DatasetSpec,
    // Frequency rank -> bucket id, per feature. Rank 0 is the hottest.
    rank_to_bucket: Vec<Vec<usize>>,
    teacher: Teacher,
    zipf: Vec<Zipf<f64>>,
    exp: Exp<f64>,
    draws: RngStream,
    period_of: Vec<usize>,
}

struct Row {
    label: u8,
    raw_numeric: Vec<f64>,
    buckets: Vec<usize>,
    teacher_logit: f64,
}

impl Generator {
    fn new(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rank_to_bucket = Vec::with_capacity(spec.features.len());
        for (f, feat) in spec.features.iter().enumerate() {
            let mut perm: Vec<usize> = (0..feat.vocab_size).collect();
            let mut stream = RngStream::with_substream(spec.seed, StreamPurpose::Init, f as u64);
            perm.shuffle(stream.inner());
            rank_to_bucket.push(perm);
        }

        let mut teacher_stream =
            RngStream::with_substream(spec.seed, StreamPurpose::Init, 1 << 32);
        let hot_weights = rank_to_bucket
            .iter()
            .map(|perm| {
                perm[..spec.hot_buckets_per_feature]
                    .iter()
                    .map(|&b| {
                        let sign = if teacher_stream.uniform() < 0.5 { -1.0 } else { 1.0 };
                        let magnitude = 0.5 + teacher_stream.uniform();
                        (b, sign * magnitude * spec.teacher_scale)
                    })
                    .collect()
            })
            .collect();
        let numeric_weights =
            (0..spec.n_numeric).map(|_| 2.0 * teacher_stream.uniform() - 1.0).collect();
        let teacher = Teacher { hot_weights, numeric_weights };

        let zipf = spec
            .features
            .iter()
            .map(|f| {
                Zipf::new(f.vocab_size as f64, f.zipf_exponent)
                    .map_err(|e| Error::input(format!("bad Zipf parameters: {e}")))
            })
            .collect::<Result<_>>()?;
        let exp = Exp::new(1.0).expect("unit rate is valid");

        let ranges = period_ranges(spec.n_examples, spec.period_count);
        let mut period_of = vec![0; spec.n_examples];
        for (p, r) in ranges.iter().enumerate() {
            period_of[r.clone()].fill(p);
        }

        Ok(Generator {
            spec: spec.clone(),
            rank_to_bucket,
            teacher,
            zipf,
            exp,
            draws: RngStream::with_substream(spec.seed, StreamPurpose::Sampling, 0),
            period_of,
        })
    }

    fn row(&mut self, i: usize) -> Row {
        let drifted = self
            .spec
            .drift_period
            .is_some_and(|d| self.period_of[i] >= d);
        let mut semantic = Vec::with_capacity(self.spec.features.len());
        let mut observed = Vec::with_capacity(self.spec.features.len());
        for (f, feat) in self.spec.features.iter().enumerate() {
            let rank = self.zipf[f].sample(self.draws.inner()) as usize - 1;
            let bucket = self.rank_to_bucket[f][rank];
            semantic.push(bucket);
            observed.push(if drifted {
                (bucket + feat.vocab_size / 2) % feat.vocab_size
            } else {
                bucket
            });
        }
        let raw_numeric: Vec<f64> =
            (0..self.spec.n_numeric).map(|_| self.exp.sample(self.draws.inner())).collect();
        let transformed: Vec<f64> = raw_numeric.iter().map(|&v| v.ln_1p()).collect();
        let z = self.teacher.logit(&semantic, &transformed);
        let label = (self.draws.uniform() < sigmoid(z)) as u8;
        Row { label, raw_numeric, buckets: observed, teacher_logit: z }
    }
}

/// Generate the dataset in memory, keeping the teacher for oracle checks.
pub fn synthesize(spec: &DatasetSpec) -> Result<GeneratedData> {
    let mut g = Generator::new(spec)?;
    let mut examples = Vec::with_capacity(spec.n_examples);
    let mut teacher_logits = Vec::with_capacity(spec.n_examples);
    for i in 0..spec.n_examples {
        let row = g.row(i);
        teacher_logits.push(row.teacher_logit);
        examples.push(Example::new(
            row.label,
            row.raw_numeric,
            row.buckets.into_iter().map(|b| vec![b]).collect(),
        )?);
    }
    Ok(GeneratedData {
        dataset: Dataset {
            vocab_sizes: spec.features.iter().map(|f| f.vocab_size).collect(),
            n_numeric: spec.n_numeric,
            examples,
        },
        teacher: g.teacher,
        teacher_logits,
    })
}

/// Generate and write the dataset as CSV. Deterministic: the same spec
/// yields a byte-identical file.
pub fn generate_dataset(spec: &DatasetSpec, path: &Path) -> Result<()> {
    let mut g = Generator::new(spec)?;
    let mut out = BufWriter::new(File::create(path)?);
    write_header(&mut out, spec.n_numeric, &spec.features)?;
    for i in 0..spec.n_examples {
        let row = g.row(i);
        write!(out, "{}", row.label)?;
        for v in &row.raw_numeric {
            write!(out, ",{v}")?;
        }
        for &b in &row.buckets {
            write!(out, ",{b}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn write_header(
    out: &mut impl std::io::Write,
    n_numeric: usize,
    features: &[FeatureGenSpec],
) -> Result<()> {
    write!(out, "label")?;
    for j in 0..n_numeric {
        write!(out, ",num_{j}")?;
    }
    for (f, feat) in features.iter().enumerate() {
        write!(out, ",cat_{f}:{}", feat.vocab_size)?;
    }
    writeln!(out)?;
    Ok(())
}

/// Read a dataset CSV produced by [`generate_dataset`] (or hand-written in
/// the same format). Multi-valued categorical fields use `;` separators.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("empty dataset file"))??;
    let (n_numeric, vocab_sizes) = parse_header(&header)?;

    let mut examples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        examples.push(
            parse_row(&line, n_numeric, &vocab_sizes)
                .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 2)))?,
        );
    }
    if examples.is_empty() {
        return Err(Error::parse("dataset file has no examples"));
    }
    Ok(Dataset { vocab_sizes, n_numeric, examples })
}

fn parse_header(header: &str) -> Result<(usize, Vec<usize>)> {
    let mut fields = header.split(',');
    if fields.next() != Some("label") {
        return Err(Error::parse("header must start with 'label'"));
    }
    let mut n_numeric = 0;
    let mut vocab_sizes = Vec::new();
    for field in fields {
        if let Some(rest) = field.strip_prefix("num_") {
            if !vocab_sizes.is_empty() {
                return Err(Error::parse("numeric columns must precede categorical ones"));
            }
            let idx: usize = rest
                .parse()
                .map_err(|_| Error::parse(format!("bad numeric column {field:?}")))?;
            if idx != n_numeric {
                return Err(Error::parse(format!("numeric columns out of order at {field:?}")));
            }
            n_numeric += 1;
        } else if let Some(rest) = field.strip_prefix("cat_") {
            let (idx, vocab) = rest
                .split_once(':')
                .ok_or_else(|| Error::parse(format!("categorical column {field:?} lacks a vocabulary size")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(format!("bad categorical column {field:?}")))?;
            if idx != vocab_sizes.len() {
                return Err(Error::parse(format!(
                    "categorical columns out of order at {field:?}"
                )));
            }
            let vocab: usize = vocab
                .parse()
                .map_err(|_| Error::parse(format!("bad vocabulary size in {field:?}")))?;
            vocab_sizes.push(vocab);
        } else {
            return Err(Error::parse(format!("unrecognized column {field:?}")));
        }
    }
    if vocab_sizes.is_empty() {
        return Err(Error::parse("no categorical columns in header"));
    }
    Ok((n_numeric, vocab_sizes))
}

fn parse_row(line: &str, n_numeric: usize, vocab_sizes: &[usize]) -> Result<Example> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = 1 + n_numeric + vocab_sizes.len();
    if fields.len() != expected {
        return Err(Error::parse(format!(
            "{} fields, expected {expected}",
            fields.len()
        )));
    }
    let label: u8 = fields[0]
        .parse()
        .map_err(|_| Error::parse(format!("bad label {:?}", fields[0])))?;
    let raw_numeric = fields[1..1 + n_numeric]
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(format!("bad numeric value {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let buckets = fields[1 + n_numeric..]
        .iter()
        .zip(vocab_sizes)
        .map(|(s, &vocab)| {
            s.split(';')
                .map(|tok| {
                    let b: usize = tok
                        .parse()
                        .map_err(|_| Error::parse(format!("bad bucket {tok:?}")))?;
                    if b >= vocab {
                        return Err(Error::parse(format!("bucket {b} >= vocabulary {vocab}")));
                    }
                    Ok(b)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Example::new(label, raw_numeric, buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;

    fn small_spec(seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_examples: 400,
            n_numeric: 2,
            features: vec![
                FeatureGenSpec { vocab_size: 50, zipf_exponent: 1.2 },
                FeatureGenSpec { vocab_size: 30, zipf_exponent: 0.8 },
            ],
            hot_buckets_per_feature: 5,
            teacher_scale: 3.0,
            period_count: 1,
            drift_period: None,
            seed,
        }
    }

    #[test]
    fn zero_exponent_draws_uniform_buckets() {
        let c = 100;
        let spec = DatasetSpec {
            n_examples: 100_000,
            n_numeric: 0,
            features: vec![FeatureGenSpec { vocab_size: c, zipf_exponent: 0.0 }],
            hot_buckets_per_feature: 5,
            teacher_scale: 1.0,
            period_count: 1,
            drift_period: None,
            seed: 5,
        };
        let data = synthesize(&spec).unwrap();
        let counts = bucket_counts(&data.dataset.examples, &[c]).unwrap();
        let n = spec.n_examples as f64;
        let p = 1.0 / c as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        let mut beyond = 0;
        for &k in &counts[0] {
            let dev = (k as f64 - n * p).abs() / sd;
            assert!(dev < 5.0, "bucket count {k} is {dev} sds from uniform");
            if dev >= 3.0 {
                beyond += 1;
            }
        }
        assert!(beyond <= 3, "{beyond} of {c} buckets beyond 3 sds");
    }

    #[test]
    fn skewed_mass_matches_the_analytic_zipf_head() {
        let c = 10_000usize;
        let s = 1.1;
        let spec = DatasetSpec {
            n_examples: 100_000,
            n_numeric: 0,
            features: vec![FeatureGenSpec { vocab_size: c, zipf_exponent: s }],
            hot_buckets_per_feature: 100,
            teacher_scale: 1.0,
            period_count: 1,
            drift_period: None,
            seed: 9,
        };
        let data = synthesize(&spec).unwrap();
        let counts = bucket_counts(&data.dataset.examples, &[c]).unwrap();

        let top100: u64 = data.teacher.hot_weights[0]
            .iter()
            .map(|&(b, _)| counts[0][b])
            .sum();
        let empirical = top100 as f64 / spec.n_examples as f64;

        let mass = |upto: usize| -> f64 {
            (1..=upto).map(|k| (k as f64).powf(-s)).sum()
        };
        let analytic = mass(100) / mass(c);
        assert!(analytic > 0.5, "analytic head mass {analytic}");
        assert!(empirical > 0.5, "empirical head mass {empirical}");
        let sd = (analytic * (1.0 - analytic) / spec.n_examples as f64).sqrt();
        assert!(
            (empirical - analytic).abs() < 4.0 * sd + 1e-3,
            "empirical {empirical} vs analytic {analytic}"
        );
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let spec = small_spec(77);
        let dir = std::env::temp_dir();
        let a = dir.join("dpsparse_data_a.csv");
        let b = dir.join("dpsparse_data_b.csv");
        generate_dataset(&spec, &a).unwrap();
        generate_dataset(&spec, &b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let read = read_dataset(&a).unwrap();
        let direct = synthesize(&spec).unwrap().dataset;
        assert_eq!(read, direct);

        let other = synthesize(&small_spec(78)).unwrap().dataset;
        assert_ne!(read, other);
        std::fs::remove_file(&a).ok();
        std::fs::remove_file(&b).ok();
    }

    #[test]
    fn header_and_rows_parse_strictly() {
        let (n_numeric, vocabs) = parse_header("label,num_0,num_1,cat_0:10,cat_1:7").unwrap();
        assert_eq!(n_numeric, 2);
        assert_eq!(vocabs, vec![10, 7]);
        assert!(parse_header("label,cat_0").is_err());
        assert!(parse_header("num_0,label").is_err());
        assert!(parse_header("label,num_1").is_err());
        assert!(parse_header("label,num_0").is_err());

        let ex = parse_row("1,0.5,2;0;5", 1, &[10]).unwrap();
        assert_eq!(ex.label, 1);
        assert_eq!(ex.buckets, vec![vec![0, 2, 5]]);
        assert!((ex.numeric[0] - 0.5f64.ln_1p()).abs() < 1e-15);
        assert!(parse_row("1,0.5,12", 1, &[10]).is_err());
        assert!(parse_row("3,0.5,1", 1, &[10]).is_err());
        assert!(parse_row("1,0.5", 1, &[10]).is_err());
    }

    #[test]
    fn teacher_scores_beat_random_scores_on_its_own_labels() {
        let data = synthesize(&small_spec(13)).unwrap();
        let labels: Vec<u8> = data.dataset.examples.iter().map(|e| e.label).collect();
        let teacher_auc = auc(&data.teacher_logits, &labels).unwrap();

        let mut rng = RngStream::new(99, StreamPurpose::Sampling);
        for _ in 0..10 {
            let random: Vec<f64> = labels.iter().map(|_| rng.gaussian()).collect();
            let random_auc = auc(&random, &labels).unwrap();
            assert!(
                teacher_auc > random_auc + 0.15,
                "teacher {teacher_auc} vs random {random_auc}"
            );
        }
        assert!(teacher_auc > 0.85, "teacher AUC {teacher_auc}");
    }

    #[test]
    fn periods_partition_and_drift_shifts_the_head() {
        assert_eq!(period_ranges(10, 3), vec![0..3, 3..6, 6..10]);
        let ranges = period_ranges(1000, 7);
        assert_eq!(ranges[0].start, 0);
        assert_eq!(ranges.last().unwrap().end, 1000);
        for pair in ranges.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
        }

        let c = 40;
        let spec = DatasetSpec {
            n_examples: 4000,
            n_numeric: 0,
            features: vec![FeatureGenSpec { vocab_size: c, zipf_exponent: 2.0 }],
            hot_buckets_per_feature: 3,
            teacher_scale: 1.0,
            period_count: 2,
            drift_period: Some(1),
            seed: 21,
        };
        let data = synthesize(&spec).unwrap().dataset;
        let ranges = period_ranges(spec.n_examples, 2);
        let count_top = |r: &Range<usize>| {
            let counts = bucket_counts(&data.examples[r.clone()], &[c]).unwrap();
            (0..c).max_by_key(|&b| counts[0][b]).unwrap()
        };
        let before = count_top(&ranges[0]);
        let after = count_top(&ranges[1]);
        assert_eq!((before + c / 2) % c, after);
    }

    #[test]
    fn spec_validation_and_serde() {
        let spec = DatasetSpec::desk_default(1);
        spec.validate().unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: DatasetSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);

        // Omitted optional fields take defaults.
        let minimal: DatasetSpec = serde_json::from_str(
            r#"{"n_examples": 10, "n_numeric": 1,
                "features": [{"vocab_size": 5}], "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(minimal.period_count, 1);
        assert_eq!(minimal.features[0].zipf_exponent, 1.5);
        assert_eq!(minimal.hot_buckets_per_feature, 20);
        assert!(minimal.validate().is_err()); // 20 hot > vocab 5

        let mut bad = DatasetSpec::desk_default(1);
        bad.period_count = 0;
        assert!(bad.validate().is_err());
        let mut bad = DatasetSpec::desk_default(1);
        bad.drift_period = Some(1);
        assert!(bad.validate().is_err()); // needs period_count > 1
        let mut ok = DatasetSpec::desk_default(1);
        ok.period_count = 4;
        ok.drift_period = Some(2);
        ok.validate().unwrap();
    }

    #[test]
    fn split_and_counts() {
        let data = synthesize(&small_spec(31)).unwrap().dataset;
        let (train, eval) = data.split(0.2).unwrap();
        assert_eq!(train.len(), 320);
        assert_eq!(eval.len(), 80);
        assert!(data.split(1.0).is_err());
        let (all, none) = data.split(0.0).unwrap();
        assert_eq!(all.len(), 400);
        assert!(none.is_empty());

        let counts = bucket_counts(&data.examples, &data.vocab_sizes).unwrap();
        let total: u64 = counts.iter().flatten().sum();
        assert_eq!(total, 2 * 400);
    }
}

//! Purpose-tagged deterministic random streams.
//!
//! Every source of randomness in the crate draws from an [`RngStream`]: a
//! ChaCha generator keyed by a user seed and a stream id derived from the
//! purpose tag plus a substream index. Distinct purposes never share a
//! stream, so adding draws to one mechanism cannot perturb another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream's draws are used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    /// Parameter initialization.
    Init,
    /// Data sampling: categorical draws, labels, shuffles, batch selection.
    Sampling,
    /// Additive Gaussian mechanism noise.
    MechanismNoise,
    /// Gumbel perturbations for private top-k selection.
    Gumbel,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Init => 0,
            StreamPurpose::Sampling => 1,
            StreamPurpose::MechanismNoise => 2,
            StreamPurpose::Gumbel => 3,
        }
    }
}

/// Deterministic random stream with a draw counter.
///
/// The counter tracks draws made through the typed helpers (`uniform`,
/// `gaussian`, `gumbel`), which is what the mechanism instrumentation
/// checks count. Draws made through [`RngStream::inner`] (shuffling,
/// categorical sampling) are not individually counted.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    purpose: StreamPurpose,
    substream: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, purpose: StreamPurpose) -> Self {
        Self::with_substream(seed, purpose, 0)
    }

    /// Stream `index` under the same seed and purpose. Indices below 2^56
    /// are guaranteed disjoint from every other (purpose, index) pair.
    pub fn with_substream(seed: u64, purpose: StreamPurpose, index: u64) -> Self {
        assert!(index < 1 << 56, "substream index out of range");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((purpose.tag() << 56) | index);
        RngStream { seed, purpose, substream: index, draws: 0, rng }
    }

    /// A fresh stream with the same seed and purpose but a different index.
    pub fn substream(&self, index: u64) -> Self {
        Self::with_substream(self.seed, self.purpose, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> StreamPurpose {
        self.purpose
    }

    pub fn substream_index(&self) -> u64 {
        self.substream
    }

    /// Number of typed draws made so far.
    pub fn draw_count(&self) -> u64 {
        self.draws
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random()
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.draws += 1;
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    /// Gumbel draw with scale `beta` (location zero), via inversion.
    pub fn gumbel(&mut self, beta: f64) -> f64 {
        let u = self.uniform_open();
        -beta * (-u.ln()).ln()
    }

    /// Access to the underlying generator for bulk operations (shuffles,
    /// library distributions).
    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

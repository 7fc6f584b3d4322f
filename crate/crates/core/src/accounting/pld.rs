//! Privacy-loss distributions for the Poisson-subsampled Gaussian mechanism.
//!
//! The dominating pair is P = (1-gamma) N(0, sigma^2) + gamma N(1, sigma^2)
//! against Q = N(0, sigma^2). The privacy loss ln(dP/dQ)(x) is discretized
//! onto a uniform grid with pessimistic rounding (mass moves toward larger
//! loss), composed by iterated squaring with convolution, and queried for
//! hockey-stick delta(epsilon). Both neighboring directions are tracked and
//! reports take the max.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Default discretization width in privacy-loss space.
pub const DEFAULT_GRID: f64 = 1e-3;

/// Mass below this threshold is truncated from each tail and counted
/// pessimistically (upper tail toward delta, lower tail folded upward).
const TAIL_MASS: f64 = 1e-12;

/// Hard cap on discretized support length.
const MAX_BINS: usize = 1 << 26;

/// Bisection bracket for epsilon searches.
const EPS_LO: f64 = 1e-4;
const EPS_HI: f64 = 1e3;

/// Discretized distribution of privacy-loss values for one direction.
/// Bin i carries mass at loss (min_k + i) * grid; infinity_mass counts
/// fully toward every delta query.
#[derive(Clone, Debug)]
pub struct LossPmf {
    grid: f64,
    min_k: i64,
    masses: Vec<f64>,
    infinity_mass: f64,
}

impl LossPmf {
    pub fn grid(&self) -> f64 {
        self.grid
    }

    pub fn support_len(&self) -> usize {
        self.masses.len()
    }

    pub fn infinity_mass(&self) -> f64 {
        self.infinity_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.infinity_mass
    }

    /// Hockey-stick divergence at `epsilon` implied by this pmf.
    pub fn delta_for_epsilon(&self, epsilon: f64) -> f64 {
        let mut delta = self.infinity_mass;
        // First bin index whose loss strictly exceeds epsilon.
        let first = ((epsilon / self.grid).floor() as i64 + 1 - self.min_k).max(0);
        for i in (first as usize)..self.masses.len() {
            let m = self.masses[i];
            if m == 0.0 {
                continue;
            }
            let loss = (self.min_k + i as i64) as f64 * self.grid;
            if loss > epsilon {
                delta += -((epsilon - loss).exp_m1()) * m;
            }
        }
        delta.clamp(0.0, 1.0)
    }

    /// Convolution of two loss pmfs (loss values add, masses convolve).
    pub fn compose(&self, other: &LossPmf) -> Result<LossPmf> {
        if (self.grid - other.grid).abs() > 1e-12 * self.grid {
            return Err(Error::structural(format!(
                "grid mismatch: {} vs {}",
                self.grid, other.grid
            )));
        }
        let out_len = self.masses.len() + other.masses.len() - 1;
        if out_len > MAX_BINS {
            return Err(Error::precision(format!(
                "composed support of {out_len} bins exceeds the grid range cap"
            )));
        }
        let masses = convolve(&self.masses, &other.masses);
        let infinity_mass =
            self.infinity_mass + other.infinity_mass - self.infinity_mass * other.infinity_mass;
        let mut out = LossPmf {
            grid: self.grid,
            min_k: self.min_k + other.min_k,
            masses,
            infinity_mass,
        };
        out.truncate_tails(TAIL_MASS);
        Ok(out)
    }

    /// T-fold self-composition by iterated squaring.
    pub fn self_compose(&self, t: u32) -> Result<LossPmf> {
        if t == 0 {
            return Err(Error::input("composition count must be at least 1"));
        }
        let mut result: Option<LossPmf> = None;
        let mut base = self.clone();
        let mut t = t;
        while t > 0 {
            if t & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.compose(&base)?,
                });
            }
            t >>= 1;
            if t > 0 {
                base = base.compose(&base)?;
            }
        }
        Ok(result.expect("t >= 1"))
    }

    /// Drop up to `bound` of probability mass from the tails. The upper
    /// tail joins the infinity mass (counts toward delta); the lower tail
    /// is folded up into the lowest kept bin. Both moves only increase
    /// reported delta, preserving the upper-bound discipline.
    fn truncate_tails(&mut self, bound: f64) {
        let half = bound / 2.0;
        let mut upper = 0.0;
        let mut hi = self.masses.len();
        while hi > 1 && upper + self.masses[hi - 1] <= half {
            upper += self.masses[hi - 1];
            hi -= 1;
        }
        self.masses.truncate(hi);
        self.infinity_mass += upper;

        let mut lower = 0.0;
        let mut lo = 0usize;
        while lo + 1 < self.masses.len() && lower + self.masses[lo] <= half {
            lower += self.masses[lo];
            lo += 1;
        }
        if lo > 0 {
            self.masses.drain(..lo);
            self.min_k += lo as i64;
            self.masses[0] += lower;
        }
        while self.masses.len() > 1 && *self.masses.last().unwrap() == 0.0 {
            self.masses.pop();
        }
        while self.masses.len() > 1 && self.masses[0] == 0.0 {
            self.masses.remove(0);
            self.min_k += 1;
        }
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    if a.len().saturating_mul(b.len()) <= 1 << 22 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(n, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(n, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.truncate(out_len);
    fa.iter().map(|c| (c.re * scale).max(0.0)).collect()
}

/// Parameters of the dominating pair.
#[derive(Clone, Copy, Debug)]
pub struct DominatingPair {
    pub gamma: f64,
    pub sigma: f64,
}

impl DominatingPair {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::input(format!("gamma must be in (0, 1], got {gamma}")));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::input(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(DominatingPair { gamma, sigma })
    }

    /// ln(dP/dQ) at x: ln((1-gamma) + gamma * exp((2x-1)/(2 sigma^2))).
    fn loss(&self, x: f64) -> f64 {
        let r = (2.0 * x - 1.0) / (2.0 * self.sigma * self.sigma);
        if r > 0.0 {
            r + (self.gamma + (1.0 - self.gamma) * (-r).exp()).ln()
        } else {
            (self.gamma * r.exp_m1()).ln_1p()
        }
    }

    /// Inverse of `loss`; -inf when l is at or below the infimum ln(1-gamma).
    fn loss_inverse(&self, l: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        if self.gamma == 1.0 {
            return 0.5 + s2 * l;
        }
        if l > 300.0 {
            return 0.5 + s2 * (l - self.gamma.ln());
        }
        let arg = l.exp_m1() + self.gamma;
        if arg <= 0.0 {
            return f64::NEG_INFINITY;
        }
        0.5 + s2 * (arg / self.gamma).ln()
    }
}

/// Standard deviation of the remove-direction privacy loss under P, by
/// midpoint quadrature. Pessimistic rounding shifts each composed step by
/// up to one grid cell, so the grid has to resolve this scale for the bias
/// to stay a small fraction of the composed spread.
pub(crate) fn loss_scale(gamma: f64, sigma: f64) -> f64 {
    let pair = match DominatingPair::new(gamma, sigma) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    let (x_lo, x_hi) = (-12.0 * sigma, 1.0 + 12.0 * sigma);
    let n = 4001;
    let h = (x_hi - x_lo) / n as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = x_lo + (i as f64 + 0.5) * h;
        let p = norm
            * ((1.0 - gamma) * (-x * x / (2.0 * sigma * sigma)).exp()
                + gamma * (-(x - 1.0) * (x - 1.0) / (2.0 * sigma * sigma)).exp());
        let l = pair.loss(x);
        let w = p * h;
        m0 += w;
        m1 += w * l;
        m2 += w * l * l;
    }
    if m0 <= 0.0 {
        return f64::INFINITY;
    }
    let mean = m1 / m0;
    (m2 / m0 - mean * mean).max(0.0).sqrt()
}

/// Privacy-loss distributions for both neighboring directions.
#[derive(Clone, Debug)]
pub struct Pld {
    remove: LossPmf,
    add: LossPmf,
}

impl Pld {
    pub fn grid(&self) -> f64 {
        self.remove.grid
    }

    pub fn remove_direction(&self) -> &LossPmf {
        &self.remove
    }

    pub fn add_direction(&self) -> &LossPmf {
        &self.add
    }

    /// Max of the two directions' hockey-stick divergences.
    pub fn delta_for_epsilon(&self, epsilon: f64) -> f64 {
        self.remove
            .delta_for_epsilon(epsilon)
            .max(self.add.delta_for_epsilon(epsilon))
    }

    /// Smallest epsilon on the search bracket with delta(epsilon) <= delta,
    /// by bisection. Returns infinity when even the bracket top fails.
    pub fn epsilon_for_delta(&self, delta: f64) -> f64 {
        if self.delta_for_epsilon(EPS_LO) <= delta {
            return EPS_LO;
        }
        if self.delta_for_epsilon(EPS_HI) > delta {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (EPS_LO, EPS_HI);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.delta_for_epsilon(mid) <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    pub fn compose(&self, other: &Pld) -> Result<Pld> {
        Ok(Pld {
            remove: self.remove.compose(&other.remove)?,
            add: self.add.compose(&other.add)?,
        })
    }

    pub fn self_compose(&self, t: u32) -> Result<Pld> {
        Ok(Pld {
            remove: self.remove.self_compose(t)?,
            add: self.add.self_compose(t)?,
        })
    }
}

/// Discretize both directions of the dominating pair's privacy loss.
///
/// Remove direction: loss L(x) under x ~ P. Add direction: loss -L(x)
/// under x ~ Q. Each bin k covers losses in ((k-1) h, k h] and reports k h,
/// so rounding is pessimistic. The x-range is truncated where either
/// distribution has tail mass below 1e-12; upper-loss tail mass joins the
/// infinity mass, lower-loss tail mass folds into the lowest bin.
pub fn build_pld(gamma: f64, sigma: f64, grid_width: f64) -> Result<Pld> {
    let pair = DominatingPair::new(gamma, sigma)?;
    if !grid_width.is_finite() || grid_width <= 0.0 || grid_width > 0.5 {
        return Err(Error::precision(format!(
            "grid width must be in (0, 0.5], got {grid_width}"
        )));
    }
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let z_tail = unit.inverse_cdf(1.0 - TAIL_MASS);
    let x_lo = -sigma * z_tail;
    let x_hi = 1.0 + sigma * z_tail;
    let h = grid_width;

    let cdf_p = |x: f64| -> f64 {
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        (1.0 - gamma) * unit.cdf(x / sigma) + gamma * unit.cdf((x - 1.0) / sigma)
    };
    let cdf_q = |x: f64| -> f64 {
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        unit.cdf(x / sigma)
    };

    // Remove direction: bins over L(x), mass under P.
    let k_min = (pair.loss(x_lo) / h).ceil() as i64;
    let k_max = (pair.loss(x_hi) / h).ceil() as i64;
    let bins = (k_max - k_min + 1) as usize;
    if bins > MAX_BINS {
        return Err(Error::precision(format!("{bins} bins exceed the grid range cap")));
    }
    let mut masses = Vec::with_capacity(bins);
    let mut prev = 0.0;
    for k in k_min..=k_max {
        let x = pair.loss_inverse(k as f64 * h);
        let c = cdf_p(x);
        masses.push((c - prev).max(0.0));
        prev = c;
    }
    let remove = LossPmf {
        grid: h,
        min_k: k_min,
        masses,
        infinity_mass: (1.0 - prev).max(0.0),
    };

    // Add direction: bins over -L(x), mass under Q. The loss is bounded
    // above by -ln(1-gamma) when gamma < 1; for gamma = 1 it is unbounded
    // and the low-x tail joins the infinity mass.
    let k_lo = (-pair.loss(x_hi) / h).ceil() as i64;
    let (k_hi, x_floor, infinity_mass) = if gamma == 1.0 {
        (
            (-pair.loss(x_lo) / h).ceil() as i64,
            x_lo,
            cdf_q(x_lo),
        )
    } else {
        ((-(1.0 - gamma).ln() / h).ceil() as i64, f64::NEG_INFINITY, 0.0)
    };
    let bins = (k_hi - k_lo + 1) as usize;
    if bins > MAX_BINS {
        return Err(Error::precision(format!("{bins} bins exceed the grid range cap")));
    }
    let mut masses = vec![0.0; bins];
    // Bin k covers x in [loss_inverse(-k h), loss_inverse(-(k-1) h)); the
    // lowest-loss bin absorbs everything above, the highest-loss bin
    // everything below (down to x_floor).
    let mut upper_x = f64::INFINITY;
    for k in k_lo..=k_hi {
        let lower_x = if k == k_hi {
            x_floor
        } else {
            pair.loss_inverse(-(k as f64) * h).max(x_floor)
        };
        let mass = (cdf_q(upper_x) - cdf_q(lower_x)).max(0.0);
        masses[(k - k_lo) as usize] = mass;
        upper_x = lower_x;
    }
    let add = LossPmf { grid: h, min_k: k_lo, masses, infinity_mass };

    let mut pld = Pld { remove, add };
    pld.remove.truncate_tails(TAIL_MASS);
    pld.add.truncate_tails(TAIL_MASS);
    Ok(pld)
}

//! Privacy accounting: guarantees and noise calibration.
//!
//! Wraps the privacy-loss-distribution machinery in [`pld`] with the
//! operations the training algorithms need: composing the two Gaussian
//! stages of adaptive filtering into one effective noise scale, computing
//! epsilon for a training configuration, calibrating the smallest noise
//! multiplier meeting a budget, and the analytic utility bounds.

pub mod pld;

pub use pld::{build_pld, LossPmf, Pld, DEFAULT_GRID};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Privacy budget for one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub epsilon: f64,
    pub delta: f64,
    /// Pure-DP budget deducted for frequency-based selection; zero when the
    /// frequencies are public.
    pub selection_epsilon: f64,
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::input(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.epsilon.is_finite() {
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return Err(Error::input(format!("delta must be in (0,1), got {}", self.delta)));
            }
            if self.selection_epsilon < 0.0 || self.selection_epsilon >= self.epsilon {
                return Err(Error::input(format!(
                    "selection epsilon {} must be in [0, epsilon)",
                    self.selection_epsilon
                )));
            }
        }
        Ok(())
    }

    /// Budget left for gradient noising after the selection deduction.
    pub fn train_epsilon(&self) -> f64 {
        if self.epsilon.is_finite() {
            self.epsilon - self.selection_epsilon
        } else {
            self.epsilon
        }
    }
}

/// Effective noise scale of running two Gaussian stages with multipliers
/// sigma1 and sigma2 on the same data: (sigma1^-2 + sigma2^-2)^(-1/2).
/// An infinite multiplier is the switch for a disabled stage.
pub fn compose_gaussian_sigmas(sigma1: f64, sigma2: f64) -> Result<f64> {
    for (name, v) in [("sigma1", sigma1), ("sigma2", sigma2)] {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::input(format!("{name} must be positive, got {v}")));
        }
    }
    if sigma1.is_infinite() {
        return Ok(sigma2);
    }
    if sigma2.is_infinite() {
        return Ok(sigma1);
    }
    Ok((sigma1.powi(-2) + sigma2.powi(-2)).powf(-0.5))
}

/// Split an effective noise scale into two stages with a given ratio
/// rho = sigma1 / sigma2, inverting `compose_gaussian_sigmas`.
pub fn split_sigma_by_ratio(sigma_effective: f64, ratio: f64) -> Result<(f64, f64)> {
    if !sigma_effective.is_finite() || sigma_effective <= 0.0 {
        return Err(Error::input(format!(
            "effective sigma must be positive and finite, got {sigma_effective}"
        )));
    }
    if ratio.is_nan() || ratio <= 0.0 {
        return Err(Error::input(format!("ratio must be positive, got {ratio}")));
    }
    if ratio.is_infinite() {
        return Ok((f64::INFINITY, sigma_effective));
    }
    let sigma2 = sigma_effective * (1.0 + ratio.powi(-2)).sqrt();
    let sigma1 = ratio * sigma2;
    Ok((sigma1, sigma2))
}

/// Epsilon consumed by T Poisson-subsampled Gaussian steps at rate gamma
/// and noise multiplier sigma, for the given delta. Pessimistic: reported
/// epsilon upper-bounds the true guarantee.
pub fn epsilon_for(sigma: f64, gamma: f64, steps: u32, delta: f64) -> Result<f64> {
    epsilon_for_with_grid(sigma, gamma, steps, delta, DEFAULT_GRID)
}

/// As [`epsilon_for`] with an explicit upper bound on the discretization
/// width. When the single-step loss distribution is narrower than the
/// requested grid (small sampling rates), the width is halved until it
/// resolves that scale, else every step's rounding bias lands in the same
/// one or two cells and the composed epsilon inflates by about one grid
/// width per step.
pub fn epsilon_for_with_grid(
    sigma: f64,
    gamma: f64,
    steps: u32,
    delta: f64,
    grid_width: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must be in (0,1), got {delta}")));
    }
    if sigma.is_infinite() {
        return Ok(0.0);
    }
    let pld = build_pld(gamma, sigma, refine_grid(gamma, sigma, grid_width))?;
    let composed = pld.self_compose(steps)?;
    Ok(composed.epsilon_for_delta(delta))
}

/// Halve the grid until it resolves the single-step loss scale. Power-of-two
/// steps keep equal-parameter calls on identical grids; the 8192x cap bounds
/// the support length.
fn refine_grid(gamma: f64, sigma: f64, grid_width: f64) -> f64 {
    let target = (pld::loss_scale(gamma, sigma) / 128.0).max(grid_width / 8192.0);
    let mut g = grid_width;
    while g > target {
        g *= 0.5;
    }
    g
}

/// Smallest noise multiplier (within 1e-3 relative) whose epsilon at the
/// given delta, sampling rate and step count does not exceed the target.
pub fn calibrate_sigma(epsilon: f64, delta: f64, gamma: f64, steps: u32) -> Result<f64> {
    calibrate_sigma_with_grid(epsilon, delta, gamma, steps, DEFAULT_GRID)
}

pub fn calibrate_sigma_with_grid(
    epsilon: f64,
    delta: f64,
    gamma: f64,
    steps: u32,
    grid_width: f64,
) -> Result<f64> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::range(format!("target epsilon must be positive, got {epsilon}")));
    }
    const SIGMA_MIN: f64 = 1e-2;
    const SIGMA_MAX: f64 = 1e4;
    let eps_of = |sigma: f64| epsilon_for_with_grid(sigma, gamma, steps, delta, grid_width);

    let mut hi = 1.0;
    while eps_of(hi)? > epsilon {
        hi *= 2.0;
        if hi > SIGMA_MAX {
            return Err(Error::range(format!(
                "no noise multiplier below {SIGMA_MAX} achieves epsilon {epsilon}"
            )));
        }
    }
    let mut lo = hi / 2.0;
    while eps_of(lo)? <= epsilon {
        hi = lo;
        lo /= 2.0;
        if lo < SIGMA_MIN {
            return Ok(hi);
        }
    }
    while (hi - lo) > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if eps_of(mid)? <= epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Total epsilon of adaptive filtering: survey noise sigma1 and gradient
/// noise sigma2 compose into a single effective Gaussian scale.
pub fn adafest_budget(
    sigma1: f64,
    sigma2: f64,
    gamma: f64,
    steps: u32,
    delta: f64,
) -> Result<f64> {
    let sigma = compose_gaussian_sigmas(sigma1, sigma2)?;
    epsilon_for(sigma, gamma, steps, delta)
}

/// Basic composition of the training budget with a pure-DP selection spend.
pub fn dpfest_budget(
    train_epsilon: f64,
    train_delta: f64,
    selection_epsilon: f64,
) -> (f64, f64) {
    (train_epsilon + selection_epsilon, train_delta)
}

/// Excess empirical loss bound for noisy projected gradient descent over a
/// domain of radius R: (R/sqrt(T)) * sqrt((L+alpha)^2 + sigma^2) + alpha*R.
pub fn excess_loss_bound(
    lipschitz: f64,
    clip_slack: f64,
    sigma: f64,
    radius: f64,
    steps: u32,
) -> Result<f64> {
    for (name, v) in [
        ("lipschitz", lipschitz),
        ("clip_slack", clip_slack),
        ("sigma", sigma),
        ("radius", radius),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::input(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if steps == 0 {
        return Err(Error::input("steps must be at least 1"));
    }
    let t = steps as f64;
    Ok(radius / t.sqrt() * ((lipschitz + clip_slack).powi(2) + sigma * sigma).sqrt()
        + clip_slack * radius)
}

/// Whether noising h surviving coordinates with a gamma_frac share of
/// clipped-away signal strictly beats dense noising of all D coordinates:
/// sqrt(L^2 (1+gamma)^2 + h sigma^2) + gamma L sqrt(T) < sqrt(L^2 + D sigma^2).
pub fn tradeoff_predicate(
    lipschitz: f64,
    gamma_frac: f64,
    surviving: f64,
    total: f64,
    sigma: f64,
    steps: u32,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&gamma_frac) {
        return Err(Error::input(format!("gamma_frac must be in [0,1], got {gamma_frac}")));
    }
    if surviving > total {
        return Err(Error::input(format!(
            "surviving count {surviving} exceeds total {total}"
        )));
    }
    let t = steps as f64;
    let l = lipschitz;
    let lhs = (l * l * (1.0 + gamma_frac).powi(2) + surviving * sigma * sigma).sqrt()
        + gamma_frac * l * t.sqrt();
    let rhs = (l * l + total * sigma * sigma).sqrt();
    Ok(lhs < rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_composition_matches_formula() {
        let s = compose_gaussian_sigmas(1.0, 1.0).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let s = compose_gaussian_sigmas(2.0, 2.0).unwrap();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sigma_composition_infinite_switch_is_identity() {
        assert_eq!(compose_gaussian_sigmas(f64::INFINITY, 1.7).unwrap(), 1.7);
        assert_eq!(compose_gaussian_sigmas(0.3, f64::INFINITY).unwrap(), 0.3);
    }

    #[test]
    fn sigma_composition_symmetric_and_below_min() {
        for (a, b) in [(0.5, 3.0), (1.0, 1.0), (2.0, 0.1), (10.0, 0.9)] {
            let ab = compose_gaussian_sigmas(a, b).unwrap();
            let ba = compose_gaussian_sigmas(b, a).unwrap();
            assert_eq!(ab, ba);
            assert!(ab <= a.min(b));
        }
        assert!(compose_gaussian_sigmas(0.0, 0.0).is_err());
        assert!(compose_gaussian_sigmas(-1.0, 1.0).is_err());
    }

    #[test]
    fn ratio_split_round_trips() {
        for (sigma, ratio) in [(0.8, 1.0), (1.0, 5.0), (2.5, 10.0), (0.5, 0.4)] {
            let (s1, s2) = split_sigma_by_ratio(sigma, ratio).unwrap();
            assert!((s1 / s2 - ratio).abs() < 1e-12);
            let back = compose_gaussian_sigmas(s1, s2).unwrap();
            assert!((back - sigma).abs() < 1e-12);
        }
        let (s1, s2) = split_sigma_by_ratio(1.3, f64::INFINITY).unwrap();
        assert!(s1.is_infinite());
        assert_eq!(s2, 1.3);
    }

    #[test]
    fn epsilon_for_decreases_in_sigma() {
        let mut prev = f64::INFINITY;
        for sigma in [0.7, 1.0, 1.5, 3.0] {
            let eps = epsilon_for(sigma, 0.05, 50, 1e-5).unwrap();
            assert!(eps < prev);
            prev = eps;
        }
    }

    #[test]
    fn infinite_sigma_costs_nothing() {
        assert_eq!(epsilon_for(f64::INFINITY, 0.1, 100, 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn calibration_round_trips_below_target() {
        for (eps, gamma, steps) in [(1.0, 0.02, 200u32), (0.5, 0.01, 100), (4.0, 0.05, 500)] {
            let delta = 1e-5;
            let sigma = calibrate_sigma(eps, delta, gamma, steps).unwrap();
            let achieved = epsilon_for(sigma, gamma, steps, delta).unwrap();
            assert!(achieved <= eps, "achieved {achieved} > target {eps}");
            // Minimality: shaving a step of the relative tolerance off the
            // calibrated value must overshoot the target.
            let shaved = sigma * (1.0 - 3e-3);
            let violated = epsilon_for(shaved, gamma, steps, delta).unwrap();
            assert!(violated > eps, "sigma {sigma} is not minimal ({violated} <= {eps})");
        }
    }

    #[test]
    fn calibrated_sigma_decreases_in_epsilon() {
        let mut prev = f64::INFINITY;
        for eps in [0.25, 0.5, 1.0, 2.0, 8.0] {
            let sigma = calibrate_sigma(eps, 1e-5, 0.02, 300).unwrap();
            assert!(sigma < prev, "eps {eps}: {sigma} >= {prev}");
            prev = sigma;
        }
    }

    #[test]
    fn calibration_inverts_the_analytic_gaussian() {
        // delta of the pure Gaussian mechanism at sigma = 1, eps = 1.
        let delta = 0.12693;
        let sigma = calibrate_sigma(1.0, delta, 1.0, 1).unwrap();
        assert!((sigma - 1.0).abs() < 1e-2, "sigma {sigma}");
    }

    #[test]
    fn unachievable_target_is_range_error() {
        assert!(matches!(calibrate_sigma(-1.0, 1e-5, 0.5, 10), Err(Error::Range(_))));
        assert!(matches!(
            calibrate_sigma(1e-9, 1e-12, 1.0, 10_000),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn adafest_budget_reduces_to_dpsgd_under_infinite_survey_noise() {
        let a = adafest_budget(f64::INFINITY, 1.0, 0.02, 100, 1e-5).unwrap();
        let b = epsilon_for(1.0, 0.02, 100, 1e-5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equal_stage_noises_compose_to_sqrt_half() {
        let s = 1.3;
        let a = adafest_budget(s, s, 0.02, 100, 1e-5).unwrap();
        let b = epsilon_for(s / 2.0f64.sqrt(), 0.02, 100, 1e-5).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn budget_grows_as_survey_noise_shrinks() {
        let base = adafest_budget(f64::INFINITY, 1.0, 0.02, 100, 1e-5).unwrap();
        let mild = adafest_budget(4.0, 1.0, 0.02, 100, 1e-5).unwrap();
        let heavy = adafest_budget(1.0, 1.0, 0.02, 100, 1e-5).unwrap();
        assert!(base < mild);
        assert!(mild < heavy);
    }

    #[test]
    fn dpfest_budget_is_additive() {
        assert_eq!(dpfest_budget(1.0, 1e-5, 0.0), (1.0, 1e-5));
        let (eps, delta) = dpfest_budget(0.99, 1e-5, 0.01);
        assert!((eps - 1.0).abs() < 1e-12);
        assert_eq!(delta, 1e-5);
    }

    #[test]
    fn excess_loss_bound_evaluates_lemma() {
        let b = excess_loss_bound(1.0, 0.1, 1.0, 1.0, 100).unwrap();
        assert!((b - 0.24866).abs() < 1e-5, "bound {b}");
        let plain = excess_loss_bound(1.0, 0.0, 0.0, 2.0, 400).unwrap();
        assert!((plain - 2.0 * 1.0 / 20.0).abs() < 1e-12);
        for (alpha, sigma, radius) in [(0.2, 1.0, 1.0), (0.1, 2.0, 1.0), (0.1, 1.0, 3.0)] {
            let larger = excess_loss_bound(1.0, alpha, sigma, radius, 100).unwrap();
            assert!(larger > b);
        }
    }

    #[test]
    fn tradeoff_predicate_boundaries() {
        assert!(!tradeoff_predicate(1.0, 0.0, 1e6, 1e6, 1.0, 100).unwrap());
        assert!(tradeoff_predicate(1.0, 0.0, 1.0, 1e6, 1.0, 100).unwrap());
        let lhs_heavy = tradeoff_predicate(1.0, 0.9, 100.0, 1e6, 0.0, 10_000).unwrap();
        assert!(!lhs_heavy);
        // Direct arithmetic evaluation of a mixed case.
        let l: f64 = 1.0;
        let (gamma, h, d, sigma, t) = (0.01, 100.0, 1e6, 0.1, 10_000u32);
        let lhs = (l * l * 1.01f64.powi(2) + h * sigma * sigma).sqrt()
            + gamma * l * (t as f64).sqrt();
        let rhs = (l * l + d * sigma * sigma).sqrt();
        assert_eq!(
            tradeoff_predicate(l, gamma, h, d, sigma, t).unwrap(),
            lhs < rhs
        );
    }

    #[test]
    fn budget_spec_validation() {
        let ok = BudgetSpec { epsilon: 1.0, delta: 1e-5, selection_epsilon: 0.01 };
        assert!(ok.validate().is_ok());
        assert!((ok.train_epsilon() - 0.99).abs() < 1e-12);
        let inf = BudgetSpec { epsilon: f64::INFINITY, delta: 0.0, selection_epsilon: 0.0 };
        assert!(inf.validate().is_ok());
        let bad = BudgetSpec { epsilon: 1.0, delta: 1e-5, selection_epsilon: 1.5 };
        assert!(bad.validate().is_err());
        let neg = BudgetSpec { epsilon: -1.0, delta: 1e-5, selection_epsilon: 0.0 };
        assert!(neg.validate().is_err());
    }
}

//! Censored-demand estimation from mixed feedback.
//!
//! Observations arrive as (value, censored) pairs: uncensored entries are
//! exact demands, censored entries only say "demand exceeded this value".
//! The windowed Tobit fit treats the former as Gaussian density terms and
//! the latter as upper-tail survival terms, which removes the downward
//! bias a naive mean of observed values suffers under censoring.

use crate::stats::{inverse_mills, inverse_mills_derivative, log_normal_tail, SIGMA_FLOOR};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub window_capacity: usize,
    /// Pessimism slope β in Ψ(n) = 1 + β·min(n, n_max).
    pub beta: f64,
    /// Streak saturation point N_max.
    pub n_max: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            window_capacity: 64,
            beta: 0.5,
            n_max: 10,
        }
    }
}

/// Ring buffer of (value, censored) feedback entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredWindow {
    entries: Vec<(f64, bool)>,
    capacity: usize,
    head: usize,
    filled: bool,
}

impl CensoredWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        CensoredWindow {
            entries: Vec::with_capacity(capacity),
            capacity,
            head: 0,
            filled: false,
        }
    }

    pub fn push(&mut self, value: f64, censored: bool) {
        debug_assert!((0.0..=1.0).contains(&value));
        if self.filled {
            self.entries[self.head] = (value, censored);
            self.head = (self.head + 1) % self.capacity;
        } else {
            self.entries.push((value, censored));
            if self.entries.len() == self.capacity {
                self.filled = true;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, bool)> {
        self.entries.iter()
    }

    pub fn values_mean(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.0).sum::<f64>() / self.entries.len() as f64
    }

    pub fn values_std(&self) -> f64 {
        if self.entries.len() < 2 {
            return 0.0;
        }
        let mean = self.values_mean();
        let var = self
            .entries
            .iter()
            .map(|e| (e.0 - mean) * (e.0 - mean))
            .sum::<f64>()
            / self.entries.len() as f64;
        libm::sqrt(var)
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|e| e.1).count() as f64 / self.entries.len() as f64
    }
}

/// Demand belief extracted from censored feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoredEstimate {
    pub mu_hat: f64,
    pub sigma_hat: f64,
    /// Ψ(streak), exactly `pessimism_factor`.
    pub pessimism: f64,
    /// σ̂ / √(effective uncensored count).
    pub uncertainty: f64,
    /// Set when the window held no uncensored entry and the estimate is
    /// extrapolated from thresholds alone.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorError {
    TooFewEntries { got: usize, need: usize },
}

impl fmt::Display for EstimatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorError::TooFewEntries { got, need } => {
                write!(f, "estimation needs >= {need} window entries, got {got}")
            }
        }
    }
}

impl core::error::Error for EstimatorError {}

/// Ψ(n) = 1 + β·min(n, N_max): nondecreasing, saturating at 1 + β·N_max.
pub fn pessimism_factor(n_consecutive_censored: usize, beta: f64, n_max: usize) -> f64 {
    debug_assert!(beta >= 0.0 && n_max >= 1);
    1.0 + beta * n_consecutive_censored.min(n_max) as f64
}

const MIN_ENTRIES: usize = 5;
const MAX_SOLVER_STEPS: usize = 25;

/// Tobit log-likelihood of the window at (μ, σ).
fn tobit_ll(entries: &[(f64, bool)], mu: f64, sigma: f64) -> f64 {
    let mut ll = 0.0;
    for &(v, censored) in entries {
        let z = (v - mu) / sigma;
        if censored {
            ll += log_normal_tail(z);
        } else {
            ll += -libm::log(sigma) - 0.5 * z * z;
        }
    }
    ll
}

/// Gradient and Hessian of the Tobit log-likelihood in (μ, σ).
fn tobit_grad_hess(entries: &[(f64, bool)], mu: f64, sigma: f64) -> ([f64; 2], [f64; 3]) {
    let (mut gm, mut gs) = (0.0, 0.0);
    let (mut hmm, mut hms, mut hss) = (0.0, 0.0, 0.0);
    let inv_s = 1.0 / sigma;
    let inv_s2 = inv_s * inv_s;
    for &(v, censored) in entries {
        let z = (v - mu) * inv_s;
        if censored {
            let lam = inverse_mills(z);
            let dlam = inverse_mills_derivative(z);
            gm += lam * inv_s;
            gs += z * lam * inv_s;
            hmm += -dlam * inv_s2;
            hms += -(z * dlam + lam) * inv_s2;
            hss += -z * (2.0 * lam + z * dlam) * inv_s2;
        } else {
            gm += z * inv_s;
            gs += (z * z - 1.0) * inv_s;
            hmm += -inv_s2;
            hms += -2.0 * z * inv_s2;
            hss += (1.0 - 3.0 * z * z) * inv_s2;
        }
    }
    ([gm, gs], [hmm, hms, hss])
}

/// Bisection on the sign of one gradient coordinate; the Tobit likelihood
/// is unimodal in each coordinate with the other held fixed.
fn bisect_coordinate(
    entries: &[(f64, bool)],
    fixed: f64,
    lo0: f64,
    hi0: f64,
    on_mu: bool,
) -> f64 {
    let grad_at = |x: f64| {
        let (g, _) = if on_mu {
            tobit_grad_hess(entries, x, fixed)
        } else {
            tobit_grad_hess(entries, fixed, x)
        };
        if on_mu {
            g[0]
        } else {
            g[1]
        }
    };
    let (mut lo, mut hi) = (lo0, hi0);
    if grad_at(lo) <= 0.0 {
        return lo;
    }
    if grad_at(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if grad_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Windowed estimate of (μ̂, σ̂) plus the pessimism and uncertainty
/// signals; a pure function of (window contents, streak, config).
pub fn estimate(
    window: &CensoredWindow,
    n_censored_streak: usize,
    cfg: &EstimatorConfig,
) -> Result<CensoredEstimate, EstimatorError> {
    if window.len() < MIN_ENTRIES {
        return Err(EstimatorError::TooFewEntries {
            got: window.len(),
            need: MIN_ENTRIES,
        });
    }
    let entries = &window.entries;
    let n_unc = entries.iter().filter(|e| !e.1).count();
    let pessimism = pessimism_factor(n_censored_streak, cfg.beta, cfg.n_max);

    // All censored: nothing pins the location from below, so extrapolate
    // above the highest threshold and flag it.
    if n_unc == 0 {
        let max_a = entries.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let sigma_hat = window.values_std().max(SIGMA_FLOOR);
        let mu_hat = max_a + sigma_hat * inverse_mills(0.0);
        return Ok(CensoredEstimate {
            mu_hat,
            sigma_hat,
            pessimism,
            uncertainty: sigma_hat,
            low_confidence: true,
        });
    }

    let uncertainty_of = |sigma: f64| sigma / libm::sqrt(n_unc.max(1) as f64);

    // No censored entries: the MLE is the plain sample fit.
    if n_unc == entries.len() {
        let mu_hat = window.values_mean();
        let sigma_hat = window.values_std().max(SIGMA_FLOOR);
        return Ok(CensoredEstimate {
            mu_hat,
            sigma_hat,
            pessimism,
            uncertainty: uncertainty_of(sigma_hat),
            low_confidence: false,
        });
    }

    // Mixed window: damped Newton on (μ, σ), coordinate bisection when a
    // step fails to improve the likelihood.
    let mut mu = window.values_mean();
    let mut sigma = window.values_std().max(10.0 * SIGMA_FLOOR);
    let vmin = entries.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let vmax = entries.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let span = (vmax - vmin).max(0.01);
    let mut ll = tobit_ll(entries, mu, sigma);

    for _ in 0..MAX_SOLVER_STEPS {
        let (g, h) = tobit_grad_hess(entries, mu, sigma);
        let grad_norm = libm::sqrt(g[0] * g[0] + g[1] * g[1]);
        if grad_norm < 1e-9 * entries.len() as f64 {
            break;
        }
        // Solve H·Δ = −g for the 2×2 symmetric Hessian.
        let det = h[0] * h[2] - h[1] * h[1];
        let mut stepped = false;
        if det.abs() > 1e-300 && h[0] < 0.0 {
            let dmu = -(h[2] * g[0] - h[1] * g[1]) / det;
            let dsig = -(-h[1] * g[0] + h[0] * g[1]) / det;
            let mut scale = 1.0;
            for _ in 0..8 {
                let (m2, s2) = (mu + scale * dmu, sigma + scale * dsig);
                if s2 > SIGMA_FLOOR {
                    let ll2 = tobit_ll(entries, m2, s2);
                    if ll2 > ll {
                        mu = m2;
                        sigma = s2;
                        ll = ll2;
                        stepped = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
        }
        if !stepped {
            // Newton left the admissible region; refine one coordinate at
            // a time by bisection instead.
            mu = bisect_coordinate(entries, sigma, vmin - 5.0 * span, vmax + 5.0 * span, true);
            sigma = bisect_coordinate(entries, mu, SIGMA_FLOOR, 4.0 * span + 1.0, false);
            let ll2 = tobit_ll(entries, mu, sigma);
            if ll2 <= ll + 1e-12 {
                break;
            }
            ll = ll2;
        }
    }

    let sigma_hat = sigma.max(SIGMA_FLOOR);
    Ok(CensoredEstimate {
        mu_hat: mu,
        sigma_hat,
        pessimism,
        uncertainty: uncertainty_of(sigma_hat),
        low_confidence: false,
    })
}

//! Gaussian and truncated-Gaussian primitives.
//!
//! The Inverse Mills Ratio λ(z) = φ(z)/(1−Φ(z)) is the workhorse of the
//! censored surrogate reward and the Tobit estimator, and the naive
//! φ/(1−Φ) quotient loses all precision once z approaches 8. Positive
//! arguments therefore go through the scaled complementary error function
//! erfcx(x) = exp(x²)·erfc(x), which stays O(1/x) instead of underflowing:
//! λ(z) = √(2/π) / erfcx(z/√2).

use core::fmt;

/// Lower bound applied wherever a standard deviation is consumed, in
/// normalized demand units. Keeps z = (a−μ)/σ finite.
pub const SIGMA_FLOOR: f64 = 1e-4;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// √(2/π) = λ(0).
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// A Gaussian belief (μ, σ) over the next normalized demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: f64,
    pub stddev: f64,
}

impl GaussianBelief {
    /// Builds a belief with the stddev floored at [`SIGMA_FLOOR`].
    pub fn new(mean: f64, stddev: f64) -> Self {
        debug_assert!(mean.is_finite(), "belief mean must be finite");
        GaussianBelief {
            mean,
            stddev: stddev.max(SIGMA_FLOOR),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsError {
    /// The truncation point is so far below the mean that Φ((a−μ)/σ)
    /// underflows to zero and the conditional mean is undefined in f64.
    DegenerateTruncation,
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::DegenerateTruncation => {
                write!(f, "truncation probability underflows to zero")
            }
        }
    }
}

impl core::error::Error for StatsError {}

/// Standard normal density φ(z).
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * z * z)
}

/// Standard normal CDF Φ(z) through the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Upper tail 1 − Φ(z), exact in the region where Φ(z) ≈ 1.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// log(1 − Φ(z)), stable for arbitrarily large z.
pub fn log_normal_tail(z: f64) -> f64 {
    if z < 30.0 {
        libm::log(normal_tail(z))
    } else {
        // 1−Φ(z) = φ(z)/λ(z)
        -0.5 * z * z - 0.918_938_533_204_672_7 - libm::log(inverse_mills(z))
    }
}

/// Scaled complementary error function exp(x²)·erfc(x) for x ≥ 0.
///
/// Below 26 the direct product is exact to a few ulp (erfc has not yet
/// underflowed, exp(x²) has not yet overflowed); beyond that the
/// asymptotic expansion erfcx(x) ~ 1/(x√π)·Σ (-1)ᵏ(2k-1)!!/(2x²)ᵏ has
/// terms below 1e-15 after six entries.
fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 26.0 {
        libm::exp(x * x) * libm::erfc(x)
    } else {
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=6u32 {
            term *= -((2 * k - 1) as f64) * inv2x2;
            sum += term;
        }
        sum * INV_SQRT_PI / x
    }
}

/// Inverse Mills Ratio λ(z) = φ(z)/(1−Φ(z)).
///
/// Strictly positive and strictly greater than max(z, 0) for all finite z.
pub fn inverse_mills(z: f64) -> f64 {
    if z > 0.0 {
        SQRT_2_OVER_PI / erfcx(z / SQRT_2)
    } else {
        // Tail is in [0.5, 1]; only φ can underflow, far outside any
        // domain of interest. Clamp keeps the positivity contract.
        (normal_pdf(z) / normal_tail(z)).max(f64::MIN_POSITIVE)
    }
}

/// λ′(z) = λ(z)·(λ(z) − z), strictly inside (0, 1) for all finite z.
pub fn inverse_mills_derivative(z: f64) -> f64 {
    if z <= 100.0 {
        let lam = inverse_mills(z);
        lam * (lam - z)
    } else {
        // λ(z)−z is O(1/z); the direct difference cancels once λ rounds
        // to z, so switch to the expansion λ′ ~ 1 − z⁻² + 6z⁻⁴ − 50z⁻⁶.
        // Once 1/z² drops below the f64 ulp at 1 the sum rounds to 1;
        // clamp to the largest representable value below it.
        let iz2 = 1.0 / (z * z);
        (1.0 - iz2 * (1.0 - iz2 * (6.0 - 50.0 * iz2))).min(1.0f64.next_down())
    }
}

/// Mean of a Gaussian truncated from above: E[D | D ≤ a] for D ~ N(μ, σ²).
///
/// Uses E[D | D ≤ a] = μ − σ·λ(−α) with α = (a−μ)/σ, which stays stable
/// however far `a` sits above or below the mean.
pub fn truncated_mean_below(mu: f64, sigma: f64, a: f64) -> Result<f64, StatsError> {
    debug_assert!(sigma > 0.0);
    let alpha = (a - mu) / sigma;
    if normal_cdf(alpha) == 0.0 {
        return Err(StatsError::DegenerateTruncation);
    }
    Ok(mu - sigma * inverse_mills(-alpha))
}

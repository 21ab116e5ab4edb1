//! Scalar probability kernels: Gaussian, Gamma and discrete distributions,
//! the probit link and entropy formulas.
//!
//! The standard normal CDF is evaluated through `erfc` in the central region
//! and through the Mills ratio (continued fraction) when `|x| > 8`, so ratios
//! such as `φ(x)/Φ(x)` stay finite deep in the tails.

use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};

/// Smallest variance any moment-matching step may return.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Variance used to represent a clamped (observed) continuous variable.
pub const POINT_MASS_VARIANCE: f64 = 1e-12;

/// Shape used to represent a clamped precision as a Gamma distribution.
pub const POINT_MASS_SHAPE: f64 = 1e12;

/// Likelihood mass below which a factor update is treated as carrying no usable evidence.
pub const NEGLIGIBLE_MASS: f64 = 1e-300;

/// Probabilities closer than this are a tie when extracting a mode. Sequential
/// message passing leaves asymmetries of this order on symmetric inputs.
pub const MODE_TIE_TOLERANCE: f64 = 1e-4;

const TAIL_SWITCH: f64 = 8.0;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Univariate Gaussian in moment form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(DareError::InvalidParameter(format!("gaussian mean {mean} is not finite")));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(DareError::InvalidParameter(format!(
                "gaussian variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, variance: 1.0 }
    }

    pub fn point_mass(mean: f64) -> Self {
        Self { mean, variance: POINT_MASS_VARIANCE }
    }

    pub fn is_point_mass(&self) -> bool {
        self.variance <= 10.0 * POINT_MASS_VARIANCE
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }

    pub fn precision_mean(&self) -> f64 {
        self.mean / self.variance
    }

    pub fn to_natural(&self) -> GaussianNatural {
        GaussianNatural {
            precision: self.precision(),
            precision_mean: self.precision_mean(),
        }
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * self.variance).ln()
    }
}

/// Gaussian (or Gaussian-shaped message) in natural parameters. A message may
/// carry zero or negative precision; only marginals have to be proper.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianNatural {
    pub precision: f64,
    pub precision_mean: f64,
}

impl GaussianNatural {
    pub const UNIFORM: GaussianNatural = GaussianNatural { precision: 0.0, precision_mean: 0.0 };

    pub fn is_proper(&self) -> bool {
        self.precision > 0.0 && self.precision.is_finite() && self.precision_mean.is_finite()
    }

    pub fn to_moments(&self) -> Option<Gaussian1D> {
        if !self.is_proper() {
            return None;
        }
        let variance = 1.0 / self.precision;
        Some(Gaussian1D { mean: self.precision_mean * variance, variance })
    }

    pub fn mul(&self, other: &GaussianNatural) -> GaussianNatural {
        GaussianNatural {
            precision: self.precision + other.precision,
            precision_mean: self.precision_mean + other.precision_mean,
        }
    }

    pub fn div(&self, other: &GaussianNatural) -> GaussianNatural {
        GaussianNatural {
            precision: self.precision - other.precision,
            precision_mean: self.precision_mean - other.precision_mean,
        }
    }

    /// `step * self + (1 - step) * previous`.
    pub fn damp(&self, previous: &GaussianNatural, step: f64) -> GaussianNatural {
        GaussianNatural {
            precision: step * self.precision + (1.0 - step) * previous.precision,
            precision_mean: step * self.precision_mean + (1.0 - step) * previous.precision_mean,
        }
    }

    pub fn max_abs_diff(&self, other: &GaussianNatural) -> f64 {
        (self.precision - other.precision)
            .abs()
            .max((self.precision_mean - other.precision_mean).abs())
    }
}

/// Gamma distribution with shape `k` and scale `θ` (mean `kθ`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaDist {
    pub shape: f64,
    pub scale: f64,
}

impl GammaDist {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() || !(scale > 0.0) || !scale.is_finite() {
            return Err(DareError::InvalidParameter(format!(
                "gamma shape and scale must be positive, got shape={shape} scale={scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Degenerate Gamma concentrated at `value`.
    pub fn point_mass(value: f64) -> Self {
        Self { shape: POINT_MASS_SHAPE, scale: value / POINT_MASS_SHAPE }
    }

    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self> {
        Self::new(mean * mean / variance, variance / mean)
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn to_natural(&self) -> GammaNatural {
        GammaNatural { shape_minus_one: self.shape - 1.0, rate: self.rate() }
    }

    /// Log density up to the normalizer `Γ(k) θ^k`.
    pub fn unnormalized_ln_pdf(&self, x: f64) -> f64 {
        (self.shape - 1.0) * x.ln() - x / self.scale
    }
}

/// Gamma in natural parameters `(k - 1, 1/θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GammaNatural {
    pub shape_minus_one: f64,
    pub rate: f64,
}

impl GammaNatural {
    pub const UNIFORM: GammaNatural = GammaNatural { shape_minus_one: 0.0, rate: 0.0 };

    pub fn is_proper(&self) -> bool {
        self.shape_minus_one > -1.0 && self.rate > 0.0 && self.rate.is_finite() && self.shape_minus_one.is_finite()
    }

    pub fn to_dist(&self) -> Option<GammaDist> {
        self.is_proper().then(|| GammaDist { shape: self.shape_minus_one + 1.0, scale: 1.0 / self.rate })
    }

    pub fn mul(&self, other: &GammaNatural) -> GammaNatural {
        GammaNatural {
            shape_minus_one: self.shape_minus_one + other.shape_minus_one,
            rate: self.rate + other.rate,
        }
    }

    pub fn div(&self, other: &GammaNatural) -> GammaNatural {
        GammaNatural {
            shape_minus_one: self.shape_minus_one - other.shape_minus_one,
            rate: self.rate - other.rate,
        }
    }

    pub fn damp(&self, previous: &GammaNatural, step: f64) -> GammaNatural {
        GammaNatural {
            shape_minus_one: step * self.shape_minus_one + (1.0 - step) * previous.shape_minus_one,
            rate: step * self.rate + (1.0 - step) * previous.rate,
        }
    }

    pub fn max_abs_diff(&self, other: &GammaNatural) -> f64 {
        (self.shape_minus_one - other.shape_minus_one)
            .abs()
            .max((self.rate - other.rate).abs())
    }
}

/// Probability vector over a finite option set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrete {
    pub probs: Vec<f64>,
}

impl Discrete {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(DareError::InvalidParameter("discrete distribution over zero options".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DareError::InvalidParameter(format!("probabilities outside [0,1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DareError::InvalidParameter(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_options: usize) -> Self {
        Self { probs: vec![1.0 / num_options as f64; num_options] }
    }

    pub fn point_mass(num_options: usize, option: usize) -> Self {
        let mut probs = vec![0.0; num_options];
        probs[option] = 1.0;
        Self { probs }
    }

    /// Normalizes nonnegative weights; all-zero weights give the uniform distribution.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Self::uniform(weights.len());
        }
        Self { probs: weights.iter().map(|w| w / total).collect() }
    }

    /// Normalizes log-weights with the log-sum-exp trick.
    pub fn from_log_weights(log_weights: &[f64]) -> Self {
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Self::uniform(log_weights.len());
        }
        let weights: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(&weights)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable option; entries within [`MODE_TIE_TOLERANCE`] of the
    /// maximum count as tied and the lowest index wins.
    pub fn mode(&self) -> usize {
        let max = self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.probs.iter().position(|&p| p >= max - MODE_TIE_TOLERANCE).unwrap_or(0)
    }

    pub fn total_variation(&self, other: &Discrete) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln φ(x)`.
pub fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Mills ratio `Φ(-u) / φ(u)`.
pub fn mills_ratio(u: f64) -> f64 {
    if u > TAIL_SWITCH {
        // R(u) = 1/(u + 1/(u + 2/(u + 3/(u + ...)))), evaluated from the back.
        let mut tail = u;
        for k in (1..=60).rev() {
            tail = u + k as f64 / tail;
        }
        1.0 / tail
    } else {
        0.5 * libm::erfc(u / std::f64::consts::SQRT_2) / std_normal_pdf(u)
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    if x < -TAIL_SWITCH {
        std_normal_pdf(x) * mills_ratio(-x)
    } else if x > TAIL_SWITCH {
        1.0 - std_normal_pdf(x) * mills_ratio(x)
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x < -TAIL_SWITCH {
        ln_std_normal_pdf(x) + mills_ratio(-x).ln()
    } else {
        std_normal_cdf(x).ln()
    }
}

/// Inverse Mills ratio `φ(z) / Φ(z)`.
pub fn inverse_mills(z: f64) -> f64 {
    if z < -TAIL_SWITCH {
        1.0 / mills_ratio(-z)
    } else {
        std_normal_pdf(z) / std_normal_cdf(z)
    }
}

/// Probability that a participant knows the answer: `Φ(√τ · t)` with
/// `t = ability - difficulty`.
pub fn prob_correct(t: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(DareError::InvalidParameter(format!("precision must be positive, got {tau}")));
    }
    Ok(std_normal_cdf(tau.sqrt() * t))
}

/// Entropy `½ ln(2πe σ²)` of a univariate Gaussian, in nats.
pub fn gaussian_entropy(variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(DareError::InvalidParameter(format!("variance must be positive, got {variance}")));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
}

/// Gaussian moment matching of `prior_t(t) · Φ(±√τ t)`.
///
/// With `s² = 1/τ + v` and `z = ±m/s`, the tilted mean is `m ± v λ(z)/s` and
/// the tilted variance `v (1 - v λ(z)(λ(z)+z)/s²)`, where `λ = φ/Φ`.
pub fn probit_factor_moments(prior_t: Gaussian1D, tau: f64, observed_c: bool) -> Result<Gaussian1D> {
    if !(tau > 0.0) {
        return Err(DareError::InvalidParameter(format!("precision must be positive, got {tau}")));
    }
    let Gaussian1D { mean, variance } = prior_t;
    let sign = if observed_c { 1.0 } else { -1.0 };
    let scale = (1.0 / tau + variance).sqrt();
    let z = sign * mean / scale;
    if ln_std_normal_cdf(z) < NEGLIGIBLE_MASS.ln() {
        return Err(DareError::NegligibleEvidence(format!(
            "probit likelihood mass below {NEGLIGIBLE_MASS:e} (z = {z})"
        )));
    }
    let lambda = inverse_mills(z);
    let post_mean = mean + sign * variance * lambda / scale;
    let shrink = variance * lambda * (lambda + z) / (scale * scale);
    let post_var = (variance * (1.0 - shrink)).max(VARIANCE_FLOOR.min(variance));
    Ok(Gaussian1D { mean: post_mean, variance: post_var })
}

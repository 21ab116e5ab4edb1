//! Probit kernel and entropy formulas against independent numerics.

use dare_core::adaptive::entropy_reduction;
use dare_core::prob::{gaussian_entropy, prob_correct, probit_factor_moments, Gaussian1D};
use proptest::prelude::*;
use statrs::function::erf::{erf, erfc};

fn erf_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    } else {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }
}

#[test]
fn prob_correct_matches_erf() {
    let taus = [0.05, 0.3, 1.0, 2.5, 9.0];
    for i in 0..200 {
        let t = -6.0 + 12.0 * i as f64 / 199.0;
        for &tau in &taus {
            let got = prob_correct(t, tau).unwrap();
            let want = erf_cdf(tau.sqrt() * t);
            assert!((got - want).abs() < 1e-10, "t {t} tau {tau}: {got} vs {want}");
        }
    }
    assert!(prob_correct(0.3, 0.0).is_err());
    assert!(prob_correct(0.3, -1.0).is_err());
}

/// Tilted moments of `N(m, v) · Φ(±√τ t)` by a dense trapezoid rule.
fn tilted(prior: Gaussian1D, tau: f64, sign: f64) -> (f64, f64) {
    let sd = prior.variance.sqrt();
    let n = 40_001;
    let half = 14.0 * sd;
    let step = 2.0 * half / (n - 1) as f64;
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let t = prior.mean - half + step * i as f64;
        let u = (t - prior.mean) / sd;
        let edge = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let w = edge * (-0.5 * u * u).exp() * erf_cdf(sign * tau.sqrt() * t);
        z += w;
        s1 += w * t;
        s2 += w * t * t;
    }
    let mean = s1 / z;
    (mean, s2 / z - mean * mean)
}

#[test]
fn probit_moments_match_quadrature() {
    let cases = [(0.0, 1.0, 1.0), (1.3, 0.5, 2.0), (-2.0, 2.0, 0.7), (0.4, 0.05, 10.0), (-3.5, 1.5, 1.0), (2.2, 3.0, 0.2)];
    for &(m, v, tau) in &cases {
        for observed in [true, false] {
            let got = probit_factor_moments(Gaussian1D::new(m, v).unwrap(), tau, observed).unwrap();
            let (mean, var) = tilted(Gaussian1D::new(m, v).unwrap(), tau, if observed { 1.0 } else { -1.0 });
            assert!((got.mean - mean).abs() < 1e-8, "m {m} v {v} tau {tau} {observed}: {} vs {mean}", got.mean);
            assert!((got.variance - var).abs() < 1e-8, "m {m} v {v} tau {tau} {observed}: {} vs {var}", got.variance);
        }
    }
}

#[test]
fn probit_moments_refuse_vanishing_evidence() {
    assert!(probit_factor_moments(Gaussian1D::new(-60.0, 0.01).unwrap(), 100.0, true).is_err());
}

#[test]
fn entropy_reduction_identities() {
    assert_eq!(entropy_reduction(0.7, 0.7).unwrap(), 0.0);
    let direct = gaussian_entropy(2.0).unwrap() - gaussian_entropy(0.5).unwrap();
    assert!((entropy_reduction(2.0, 0.5).unwrap() - direct).abs() < 1e-12);
    assert!(entropy_reduction(0.0, 1.0).is_err());
    assert!(entropy_reduction(1.0, -1.0).is_err());
}

proptest! {
    #[test]
    fn entropy_reduction_is_additive(a in 1e-3f64..1e3, b in 1e-3f64..1e3, c in 1e-3f64..1e3) {
        let lhs = entropy_reduction(a, b).unwrap() + entropy_reduction(b, c).unwrap();
        prop_assert!((lhs - entropy_reduction(a, c).unwrap()).abs() < 1e-12);
        prop_assert!((entropy_reduction(a, b).unwrap() + entropy_reduction(b, a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn probit_update_shrinks_variance(m in -4.0f64..4.0, v in 0.01f64..5.0, tau in 0.05f64..20.0, observed: bool) {
        let post = probit_factor_moments(Gaussian1D::new(m, v).unwrap(), tau, observed).unwrap();
        prop_assert!(post.variance > 0.0 && post.variance <= v);
        if observed { prop_assert!(post.mean >= m) } else { prop_assert!(post.mean <= m) }
    }

    #[test]
    fn prob_correct_is_monotone(t in -8.0f64..8.0, dt in 1e-3f64..1.0, tau in 0.01f64..10.0) {
        let lo = prob_correct(t, tau).unwrap();
        let hi = prob_correct(t + dt, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo) && lo <= hi);
    }
}

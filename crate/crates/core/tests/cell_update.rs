//! Single-factor projections against brute-force tilted moments.
//!
//! The oracle integrates the gated likelihood over `t = a - d` on a dense grid
//! (and over `ln τ` in learned mode) with an erfc-based normal CDF, then maps
//! the tilted `t` moments back to `a` and `d` by Gaussian conditioning.

use dare_core::ep::{cell_message_update, CellCavity, PrecisionCavity};
use dare_core::prob::{Discrete, GammaDist, Gaussian1D};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

struct Tilted {
    mass: f64,
    t_mean: f64,
    t_var: f64,
    tau_mean: f64,
    tau_var: f64,
    /// `E[Φ]` and `E[1 - Φ]` under the cavity.
    know: f64,
    not: f64,
}

/// `(τ, weight)` pairs: a single node or a dense `ln τ` trapezoid.
fn tau_nodes(precision: &PrecisionCavity) -> Vec<(f64, f64)> {
    match *precision {
        PrecisionCavity::Fixed(tau) => vec![(tau, 1.0)],
        PrecisionCavity::Learned(GammaDist { shape, scale }) => {
            let n = 6000;
            let center = (shape * scale).ln();
            let (lo, hi) = (center - 60.0 / shape.min(1.0), center + 6.0 + 3.0 / shape.sqrt());
            let step = (hi - lo) / (n - 1) as f64;
            let ln_norm = ln_gamma(shape) + shape * scale.ln();
            let mut nodes: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let u = lo + step * i as f64;
                    let tau = u.exp();
                    // Density of u = ln τ.
                    let w = (shape * u - tau / scale - ln_norm).exp() * step;
                    (tau, if i == 0 || i == n - 1 { 0.5 * w } else { w })
                })
                .collect();
            let total: f64 = nodes.iter().map(|n| n.1).sum();
            nodes.iter_mut().for_each(|n| n.1 /= total);
            nodes
        }
    }
}

fn tilted(cavity: &CellCavity) -> Tilted {
    let k = cavity.answer.len() as f64;
    let alpha = cavity.answer.probs[cavity.response];
    let m = cavity.ability.mean - cavity.difficulty.mean;
    let v = cavity.ability.variance + cavity.difficulty.variance;
    let sd = v.sqrt();
    let n_t = 4001;
    let half = 12.0 * sd;
    let step = 2.0 * half / (n_t - 1) as f64;
    let (mut z, mut t1, mut t2, mut tau1, mut tau2, mut know, mut not) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (tau, wt) in tau_nodes(&cavity.precision) {
        let root = tau.sqrt();
        let mut inner = 0.0;
        for i in 0..n_t {
            let t = m - half + step * i as f64;
            let zt = (t - m) / sd;
            let w = wt * step * (-0.5 * zt * zt).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let w = if i == 0 || i == n_t - 1 { 0.5 * w } else { w };
            let phi = cdf(root * t);
            let lik = alpha * phi + (1.0 - phi) / k;
            z += w * lik;
            t1 += w * lik * t;
            t2 += w * lik * t * t;
            inner += w * lik;
            know += w * phi;
            not += w * (1.0 - phi);
        }
        tau1 += inner * tau;
        tau2 += inner * tau * tau;
    }
    let t_mean = t1 / z;
    let tau_mean = tau1 / z;
    Tilted { mass: z, t_mean, t_var: t2 / z - t_mean * t_mean, tau_mean, tau_var: tau2 / z - tau_mean * tau_mean, know, not }
}

/// Moments of `x` given tilted `t` moments, where `x` and `t` are jointly Gaussian under the cavity.
fn conditioned(x: Gaussian1D, cov: f64, t_var0: f64, t_mean0: f64, t: &Tilted) -> (f64, f64) {
    let beta = cov / t_var0;
    (x.mean + beta * (t.t_mean - t_mean0), x.variance - beta * cov + beta * beta * t.t_var)
}

fn cases() -> Vec<CellCavity> {
    let g = |m: f64, v: f64| Gaussian1D::new(m, v).unwrap();
    vec![
        CellCavity { ability: g(0.0, 1.0), difficulty: g(0.0, 1.0), precision: PrecisionCavity::Fixed(1.0), answer: Discrete::uniform(2), response: 0 },
        CellCavity { ability: g(0.7, 0.4), difficulty: g(-0.3, 1.5), precision: PrecisionCavity::Fixed(2.5), answer: Discrete::new(vec![0.1, 0.6, 0.3]).unwrap(), response: 1 },
        CellCavity { ability: g(-1.2, 0.8), difficulty: g(0.9, 0.3), precision: PrecisionCavity::Fixed(0.4), answer: Discrete::new(vec![0.7, 0.1, 0.1, 0.1]).unwrap(), response: 2 },
        CellCavity { ability: g(0.2, 1.1), difficulty: g(-0.5, 0.9), precision: PrecisionCavity::Learned(GammaDist::new(2.0, 0.5).unwrap()), answer: Discrete::uniform(2), response: 1 },
        CellCavity { ability: g(1.5, 0.5), difficulty: g(0.1, 0.6), precision: PrecisionCavity::Learned(GammaDist::new(3.5, 0.4).unwrap()), answer: Discrete::new(vec![0.2, 0.2, 0.6]).unwrap(), response: 0 },
    ]
}

#[test]
fn gaussian_projections_match_tilted_moments() {
    for (i, cavity) in cases().iter().enumerate() {
        let update = cell_message_update(cavity, 32).unwrap();
        let oracle = tilted(cavity);
        let t_var0 = cavity.ability.variance + cavity.difficulty.variance;
        let t_mean0 = cavity.ability.mean - cavity.difficulty.mean;
        let (a_mean, a_var) = conditioned(cavity.ability, cavity.ability.variance, t_var0, t_mean0, &oracle);
        let (d_mean, d_var) = conditioned(cavity.difficulty, -cavity.difficulty.variance, t_var0, t_mean0, &oracle);
        let tol = 1e-6;
        assert!((update.ability.mean - a_mean).abs() < tol, "case {i}: {} vs {a_mean}", update.ability.mean);
        assert!((update.ability.variance - a_var).abs() < tol, "case {i}: {} vs {a_var}", update.ability.variance);
        assert!((update.difficulty.mean - d_mean).abs() < tol, "case {i}");
        assert!((update.difficulty.variance - d_var).abs() < tol, "case {i}");
        assert!((update.t.mean - oracle.t_mean).abs() < tol, "case {i}");
        assert!((update.t.variance - oracle.t_var).abs() < tol, "case {i}");

        // Multiplying the message back into the cavity reproduces the projection.
        let rebuilt = cavity.ability.to_natural().mul(&update.ability_message).to_moments().unwrap();
        assert!((rebuilt.mean - update.ability.mean).abs() < 1e-9);
        assert!((rebuilt.variance - update.ability.variance).abs() < 1e-9);
    }
}

#[test]
fn answer_message_and_knowledge_probability() {
    for (i, cavity) in cases().iter().enumerate() {
        let update = cell_message_update(cavity, 32).unwrap();
        let oracle = tilted(cavity);
        let k = cavity.answer.len() as f64;
        let weights: Vec<f64> =
            (0..cavity.answer.len()).map(|y| if y == cavity.response { oracle.know + oracle.not / k } else { oracle.not / k }).collect();
        let expected = Discrete::from_weights(&weights);
        for (a, b) in update.answer_message.iter().zip(&expected.probs) {
            assert!((a - b).abs() < 1e-6, "case {i}: {:?} vs {:?}", update.answer_message, expected.probs);
        }
        let alpha = cavity.answer.probs[cavity.response];
        let p_correct = alpha * oracle.know / oracle.mass;
        assert!((update.p_correct - p_correct).abs() < 1e-6, "case {i}: {} vs {p_correct}", update.p_correct);
    }
}

#[test]
fn learned_precision_moments_match_dense_quadrature() {
    for (i, cavity) in cases().iter().enumerate() {
        let PrecisionCavity::Learned(_) = cavity.precision else { continue };
        let update = cell_message_update(cavity, 32).unwrap();
        let oracle = tilted(cavity);
        let (marginal, _) = update.precision.expect("learned mode emits a precision message");
        assert!((marginal.mean() - oracle.tau_mean).abs() < 1e-6, "case {i}: {} vs {}", marginal.mean(), oracle.tau_mean);
        assert!((marginal.variance() - oracle.tau_var).abs() < 1e-6, "case {i}: {} vs {}", marginal.variance(), oracle.tau_var);
    }
}

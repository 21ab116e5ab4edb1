//! Expectation propagation over the response factor graph.
//!
//! Every observed cell contributes one gated factor
//!
//! ```text
//! f(a, d, τ, y) = Φ(√τ (a - d)) · 1{r = y} + (1 - Φ(√τ (a - d))) / K
//! ```
//!
//! and is approximated by a product of messages: Gaussian to the ability and
//! difficulty, Gamma to the precision (learned mode only) and a discrete
//! message to the answer. The tilted distribution sums both gate branches
//! exactly; marginalizing the answer under its cavity `w` leaves the
//! likelihood `A Φ(-z) + w_r Φ(z)` in `t = a - d`, with `A = 1/K`, whose
//! Gaussian moments follow from the first two derivatives of its normalizer.
//! In learned mode the precision is integrated under its Gamma cavity on a
//! sinh-stretched grid in `ln τ`, and the Gamma message is the moment fit of
//! the tilted nodes divided by the moment fit of the cavity nodes.
//!
//! Messages start flat. Cells are visited in question-major, participant-minor
//! order; every message is damped in natural parameters.

use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};
use crate::model::{Cell, CellEntry, CellPosterior, DareGraph, Posteriors, PrecisionPrior};
use crate::prob::{
    ln_std_normal_cdf, ln_std_normal_pdf, std_normal_cdf, std_normal_pdf, Discrete, GammaDist, GammaNatural,
    Gaussian1D, GaussianNatural, NEGLIGIBLE_MASS, VARIANCE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    pub max_sweeps: usize,
    /// Largest absolute change of any marginal natural parameter that still counts as converged.
    pub convergence_eps: f64,
    /// Weight of the freshly computed message; 1 disables damping.
    pub damping: f64,
    pub tau_quadrature_nodes: usize,
}

impl Default for EpConfig {
    fn default() -> Self {
        Self { max_sweeps: 100, convergence_eps: 1e-4, damping: 0.8, tau_quadrature_nodes: 32 }
    }
}

impl EpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps < 1 {
            return Err(DareError::InvalidParameter("max_sweeps must be at least 1".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(DareError::InvalidParameter("convergence_eps must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(DareError::InvalidParameter(format!("damping must be in (0,1], got {}", self.damping)));
        }
        if self.tau_quadrature_nodes < 2 {
            return Err(DareError::InvalidParameter("tau_quadrature_nodes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Counters for updates that did not go through cleanly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Updates skipped because a cavity was improper.
    pub improper_cavities: usize,
    /// Updates skipped because the tilted normalizer fell below 1e-300.
    pub negligible_evidence: usize,
    pub variance_floor_hits: usize,
    /// Set when the variance floor was hit in more than one sweep.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub posteriors: Posteriors,
    pub sweeps_used: usize,
    pub converged: bool,
    pub max_residual: f64,
    pub diagnostics: Diagnostics,
}

/// Cavity distribution of the precision seen by one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrecisionCavity {
    Fixed(f64),
    Learned(GammaDist),
}

/// Everything one cell factor sees of the rest of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCavity {
    pub ability: Gaussian1D,
    pub difficulty: Gaussian1D,
    pub precision: PrecisionCavity,
    pub answer: Discrete,
    pub response: usize,
}

/// Result of projecting one cell's tilted distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CellUpdate {
    pub ability: Gaussian1D,
    pub difficulty: Gaussian1D,
    pub ability_message: GaussianNatural,
    pub difficulty_message: GaussianNatural,
    /// Projected precision marginal and its message (learned mode only).
    pub precision: Option<(GammaDist, GammaNatural)>,
    /// Normalized message to the answer variable.
    pub answer_message: Vec<f64>,
    pub p_correct: f64,
    pub t: Gaussian1D,
    pub floor_hit: bool,
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv + 0.5 * inv2 + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

/// Quadrature nodes `(τ, weight)` for a Gamma density; weights sum to one.
///
/// Trapezoid rule in `s` with `ln τ = ln(kθ) + σ sinh(s)`, where `σ` is the
/// standard deviation of `ln τ`. The sinh stretch turns the exponential left
/// tail of `ln τ` into a double-exponential one.
pub fn gamma_quadrature_nodes(gamma: &GammaDist, n: usize) -> Vec<(f64, f64)> {
    gamma_nodes(gamma, n).iter().map(|node| (node.tau, node.weight)).collect()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    tau: f64,
    weight: f64,
}

fn gamma_nodes(gamma: &GammaDist, n: usize) -> Vec<Node> {
    let GammaDist { shape, scale } = *gamma;
    let sd = trigamma(shape).sqrt();
    let upper = ((shape + 10.0 * shape.sqrt() + 40.0) / shape).ln();
    let s_lo = -(40.0 / (shape * sd)).max(10.0).asinh();
    let s_hi = (upper / sd).max(10.0).asinh();
    let step = (s_hi - s_lo) / (n - 1) as f64;
    // exp(s) by recurrence on the uniform grid.
    let growth = step.exp();
    let mut e = s_lo.exp();
    let mut ln_weights = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let (sinh, cosh) = (0.5 * (e - 1.0 / e), 0.5 * (e + 1.0 / e));
        // ln τ relative to ln(kθ), and the log density of ln τ up to a constant.
        let offset = sd * sinh;
        let ratio = offset.exp();
        let edge = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        ln_weights.push(shape * (offset - ratio));
        nodes.push(Node { tau: shape * scale * ratio, weight: edge * cosh });
        e *= growth;
    }
    let max = ln_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (node, l) in nodes.iter_mut().zip(&ln_weights) {
        node.weight *= (l - max).exp();
        total += node.weight;
    }
    for node in &mut nodes {
        node.weight /= total;
    }
    nodes
}

fn precision_nodes(precision: &PrecisionCavity, n: usize) -> Vec<Node> {
    match precision {
        PrecisionCavity::Fixed(tau) => vec![Node { tau: *tau, weight: 1.0 }],
        PrecisionCavity::Learned(g) => gamma_nodes(g, n),
    }
}

/// Per-node terms of the `t`-likelihood `A Φ(-z) + α Φ(z)`.
struct NodeTerms {
    z_mass: f64,
    /// `∂ ln Z / ∂m`.
    d1: f64,
    /// `(∂² Z / ∂m²) / Z`.
    d2: f64,
    /// `Φ(z)` and `Φ(-z)`.
    cdf: f64,
    cdf_neg: f64,
    z: f64,
    alpha: f64,
    guess: f64,
}

impl NodeTerms {
    fn ln_cdf(&self) -> f64 {
        ln_std_normal_cdf(self.z)
    }

    fn ln_cdf_neg(&self) -> f64 {
        ln_std_normal_cdf(-self.z)
    }

    fn ln_z(&self) -> f64 {
        if self.z_mass > 1e-250 {
            return self.z_mass.ln();
        }
        let ln_alpha = if self.alpha > 0.0 { self.alpha.ln() } else { f64::NEG_INFINITY };
        ln_add(self.guess.ln() + self.ln_cdf_neg(), ln_alpha + self.ln_cdf())
    }
}

fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Normalized posterior node weights `wᵢ xᵢ / Σ wⱼ xⱼ` and the log of the sum.
/// Sums in linear space unless the result underflows.
fn weighted_posterior(nodes: &[Node], linear: impl Fn(usize) -> f64, log: impl Fn(usize) -> f64) -> (Vec<f64>, f64) {
    let terms: Vec<f64> = nodes.iter().enumerate().map(|(i, n)| n.weight * linear(i)).collect();
    let sum: f64 = terms.iter().sum();
    if sum > 1e-250 {
        return (terms.iter().map(|t| t / sum).collect(), sum.ln());
    }
    let logs: Vec<f64> = nodes.iter().enumerate().map(|(i, n)| n.weight.ln() + log(i)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (vec![0.0; nodes.len()], max);
    }
    let total: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let ln_total = max + total.ln();
    (logs.iter().map(|l| (l - ln_total).exp()).collect(), ln_total)
}

fn node_terms(mean_t: f64, var_t: f64, tau: f64, guess: f64, alpha: f64) -> NodeTerms {
    let s = (1.0 / tau + var_t).sqrt();
    let z = mean_t / s;
    let tail = std_normal_cdf(-z.abs());
    let (cdf, cdf_neg) = if z >= 0.0 { (1.0 - tail, tail) } else { (tail, 1.0 - tail) };
    let z_mass = guess * cdf_neg + alpha * cdf;
    let mut terms = NodeTerms { z_mass, d1: 0.0, d2: 0.0, cdf, cdf_neg, z, alpha, guess };
    // φ(z) / Z evaluated without forming tiny tail probabilities.
    let pdf_over_z = if z_mass > 1e-250 {
        std_normal_pdf(z) / z_mass
    } else {
        (ln_std_normal_pdf(z) - terms.ln_z()).exp()
    };
    let pdf_over_z = if pdf_over_z.is_finite() { pdf_over_z } else { 0.0 };
    terms.d1 = (alpha - guess) * pdf_over_z / s;
    terms.d2 = -z * terms.d1 / s;
    terms
}

/// Message that turns a Gaussian cavity `(m, v)` into the tilted marginal with
/// `∂ln Z/∂m = g` and `∂²ln Z/∂m² = h`. Returns the marginal, the message and
/// whether the variance floor was applied.
fn gaussian_projection(cavity: Gaussian1D, g: f64, h: f64) -> (Gaussian1D, GaussianNatural, bool) {
    let Gaussian1D { mean: m, variance: v } = cavity;
    let denom = 1.0 + v * h;
    let new_mean = m + v * g;
    let new_var = v * denom;
    if new_var < VARIANCE_FLOOR && v > VARIANCE_FLOOR || !(denom > 0.0) {
        let floored = Gaussian1D { mean: new_mean, variance: VARIANCE_FLOOR.min(v) };
        let message = floored.to_natural().div(&cavity.to_natural());
        return (floored, message, true);
    }
    let message = GaussianNatural { precision: -h / denom, precision_mean: (g - m * h) / denom };
    (Gaussian1D { mean: new_mean, variance: new_var }, message, false)
}

fn gamma_from_nodes(nodes: &[Node], weights: impl Iterator<Item = f64>) -> Option<GammaDist> {
    let (mut w_sum, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (Node { tau, .. }, w) in nodes.iter().zip(weights) {
        w_sum += w;
        m1 += w * tau;
        m2 += w * tau * tau;
    }
    if !(w_sum > 0.0) {
        return None;
    }
    let mean = m1 / w_sum;
    let var = m2 / w_sum - mean * mean;
    if !(var > 0.0) || !(mean > 0.0) {
        return None;
    }
    GammaDist::from_mean_variance(mean, var).ok()
}

/// Projects the tilted distribution of one gated cell factor onto the
/// approximating families.
///
/// The answer message is exact: `E[L | y]` under the cavities, i.e.
/// `E[Φ] + E[1-Φ]/K` for the observed option and `E[1-Φ]/K` elsewhere.
pub fn cell_message_update(cavity: &CellCavity, tau_nodes: usize) -> Result<CellUpdate> {
    let k = cavity.answer.len();
    let guess = 1.0 / k as f64;
    let alpha = cavity.answer.probs[cavity.response];
    let mean_t = cavity.ability.mean - cavity.difficulty.mean;
    let var_t = cavity.ability.variance + cavity.difficulty.variance;
    let nodes = precision_nodes(&cavity.precision, tau_nodes);

    let terms: Vec<NodeTerms> = nodes.iter().map(|n| node_terms(mean_t, var_t, n.tau, guess, alpha)).collect();
    let (posterior_node_weights, ln_total) = weighted_posterior(&nodes, |i| terms[i].z_mass, |i| terms[i].ln_z());
    if !(ln_total > NEGLIGIBLE_MASS.ln()) {
        return Err(DareError::NegligibleEvidence(format!("cell normalizer e^{ln_total}")));
    }

    let g: f64 = posterior_node_weights.iter().zip(&terms).map(|(w, t)| w * t.d1).sum();
    let second: f64 = posterior_node_weights.iter().zip(&terms).map(|(w, t)| w * t.d2).sum();
    let h = second - g * g;

    let (ability, ability_message, floor_a) = gaussian_projection(cavity.ability, g, h);
    let (difficulty, difficulty_message, floor_d) = gaussian_projection(cavity.difficulty, -g, h);
    let (t_mean, t_var) = (mean_t + var_t * g, (var_t + var_t * var_t * h).max(VARIANCE_FLOOR.min(var_t)));

    let precision = match cavity.precision {
        PrecisionCavity::Fixed(_) => None,
        PrecisionCavity::Learned(_) => {
            let prior_fit = gamma_from_nodes(&nodes, nodes.iter().map(|n| n.weight));
            let tilted_fit = gamma_from_nodes(&nodes, posterior_node_weights.iter().cloned());
            match (prior_fit, tilted_fit) {
                (Some(prior_fit), Some(tilted_fit)) => {
                    let message = tilted_fit.to_natural().div(&prior_fit.to_natural());
                    let PrecisionCavity::Learned(cav) = cavity.precision else { unreachable!() };
                    let marginal = cav.to_natural().mul(&message).to_dist().unwrap_or(tilted_fit);
                    Some((marginal, message))
                }
                _ => None,
            }
        }
    };

    // E[Φ] and E[1-Φ] under the cavity, in log space.
    let (_, ln_know) = weighted_posterior(&nodes, |i| terms[i].cdf, |i| terms[i].ln_cdf());
    let (_, ln_not) = weighted_posterior(&nodes, |i| terms[i].cdf_neg, |i| terms[i].ln_cdf_neg());
    let ln_guess = ln_not + guess.ln();
    let mut answer_message = vec![ln_guess.max(NEGLIGIBLE_MASS.ln()); k];
    answer_message[cavity.response] = ln_add(ln_know, ln_guess);
    let answer_message = Discrete::from_log_weights(&answer_message).probs;

    let know: f64 = nodes.iter().zip(&terms).map(|(n, t)| n.weight * t.cdf).sum();
    let not: f64 = nodes.iter().zip(&terms).map(|(n, t)| n.weight * t.cdf_neg).sum();
    let (num, den) = (alpha * know, guess * not);
    let p_correct = if num + den > 0.0 { num / (num + den) } else { 0.0 };

    Ok(CellUpdate {
        ability,
        difficulty,
        ability_message,
        difficulty_message,
        precision,
        answer_message,
        p_correct,
        t: Gaussian1D { mean: t_mean, variance: t_var },
        floor_hit: floor_a || floor_d,
    })
}

/// Mutable EP state: one message set per cell, marginals per variable.
struct EpState<'g> {
    graph: &'g DareGraph,
    ability: Vec<GaussianNatural>,
    difficulty: Vec<GaussianNatural>,
    precision: Vec<GammaNatural>,
    answer_log: Vec<Vec<f64>>,
    msg_ability: Vec<GaussianNatural>,
    msg_difficulty: Vec<GaussianNatural>,
    msg_precision: Vec<GammaNatural>,
    msg_answer_log: Vec<Vec<f64>>,
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn normalized_probs(log_weights: &[f64]) -> Discrete {
    Discrete::from_log_weights(log_weights)
}

impl<'g> EpState<'g> {
    fn new(graph: &'g DareGraph) -> Self {
        let n_cells = graph.cells.len();
        Self {
            graph,
            ability: graph.ability_priors.iter().map(Gaussian1D::to_natural).collect(),
            difficulty: graph.difficulty_priors.iter().map(Gaussian1D::to_natural).collect(),
            precision: graph
                .precision_priors
                .iter()
                .map(|p| match p {
                    PrecisionPrior::Learned(g) => g.to_natural(),
                    PrecisionPrior::Fixed(_) => GammaNatural::UNIFORM,
                })
                .collect(),
            answer_log: graph.answer_priors.iter().map(|d| d.probs.iter().map(|&p| ln_or_neg_inf(p)).collect()).collect(),
            msg_ability: vec![GaussianNatural::UNIFORM; n_cells],
            msg_difficulty: vec![GaussianNatural::UNIFORM; n_cells],
            msg_precision: vec![GammaNatural::UNIFORM; n_cells],
            msg_answer_log: graph.cells.iter().map(|c| vec![0.0; graph.num_options[c.question]]).collect(),
        }
    }

    fn cavity(&self, index: usize) -> Option<CellCavity> {
        let Cell { question, participant, response } = self.graph.cells[index];
        let ability = self.ability[participant].div(&self.msg_ability[index]).to_moments()?;
        let difficulty = self.difficulty[question].div(&self.msg_difficulty[index]).to_moments()?;
        let precision = match self.graph.precision_priors[question] {
            PrecisionPrior::Fixed(tau) => PrecisionCavity::Fixed(tau),
            PrecisionPrior::Learned(_) => {
                PrecisionCavity::Learned(self.precision[question].div(&self.msg_precision[index]).to_dist()?)
            }
        };
        let answer_log: Vec<f64> =
            self.answer_log[question].iter().zip(&self.msg_answer_log[index]).map(|(m, msg)| m - msg).collect();
        Some(CellCavity { ability, difficulty, precision, answer: normalized_probs(&answer_log), response })
    }

    fn update_cell(&mut self, index: usize, config: &EpConfig, diag: &mut Diagnostics) -> bool {
        let Some(cavity) = self.cavity(index) else {
            diag.improper_cavities += 1;
            return false;
        };
        let update = match cell_message_update(&cavity, config.tau_quadrature_nodes) {
            Ok(u) => u,
            Err(_) => {
                diag.negligible_evidence += 1;
                return false;
            }
        };
        let Cell { question, participant, .. } = self.graph.cells[index];
        let step = config.damping;

        let cav_a = cavity.ability.to_natural();
        let msg = update.ability_message.damp(&self.msg_ability[index], step);
        let marginal = cav_a.mul(&msg);
        if marginal.is_proper() {
            self.msg_ability[index] = msg;
            self.ability[participant] = marginal;
        }

        let cav_d = cavity.difficulty.to_natural();
        let msg = update.difficulty_message.damp(&self.msg_difficulty[index], step);
        let marginal = cav_d.mul(&msg);
        if marginal.is_proper() {
            self.msg_difficulty[index] = msg;
            self.difficulty[question] = marginal;
        }

        if let (Some((_, message)), PrecisionCavity::Learned(cav_tau)) = (update.precision, cavity.precision) {
            let msg = message.damp(&self.msg_precision[index], step);
            let marginal = cav_tau.to_natural().mul(&msg);
            if marginal.is_proper() {
                self.msg_precision[index] = msg;
                self.precision[question] = marginal;
            }
        }

        let old = &self.msg_answer_log[index];
        let fresh: Vec<f64> = update.answer_message.iter().map(|&p| ln_or_neg_inf(p)).collect();
        let damped: Vec<f64> = fresh.iter().zip(old).map(|(f, o)| step * f + (1.0 - step) * o).collect();
        let shift = damped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let damped: Vec<f64> = damped.iter().map(|d| d - shift).collect();
        let marginal: Vec<f64> = self.answer_log[question]
            .iter()
            .zip(old)
            .zip(&damped)
            .map(|((m, o), d)| m - o + d)
            .collect();
        self.msg_answer_log[index] = damped;
        self.answer_log[question] = marginal;

        if update.floor_hit {
            diag.variance_floor_hits += 1;
        }
        update.floor_hit
    }

    /// Snapshot of the non-clamped marginals' natural parameters.
    fn snapshot(&self) -> Vec<f64> {
        let g = self.graph;
        let mut out = Vec::new();
        for (i, a) in self.ability.iter().enumerate() {
            if !g.ability_priors[i].is_point_mass() {
                out.extend([a.precision, a.precision_mean]);
            }
        }
        for (i, d) in self.difficulty.iter().enumerate() {
            if !g.difficulty_priors[i].is_point_mass() {
                out.extend([d.precision, d.precision_mean]);
            }
            if matches!(g.precision_priors[i], PrecisionPrior::Learned(_)) {
                out.extend([self.precision[i].shape_minus_one, self.precision[i].rate]);
            }
            out.extend(normalized_probs(&self.answer_log[i]).probs);
        }
        out
    }

    fn posteriors(&self, tau_nodes: usize) -> Posteriors {
        let g = self.graph;
        let precision = self
            .precision
            .iter()
            .zip(&g.precision_priors)
            .map(|(nat, prior)| match prior {
                PrecisionPrior::Fixed(tau) => GammaDist::point_mass(*tau),
                PrecisionPrior::Learned(p) => nat.to_dist().unwrap_or(*p),
            })
            .collect();
        let cells = (0..g.cells.len())
            .filter_map(|i| {
                let cavity = self.cavity(i)?;
                let update = cell_message_update(&cavity, tau_nodes).ok()?;
                let c = g.cells[i];
                Some(CellEntry {
                    participant: c.participant,
                    question: c.question,
                    posterior: CellPosterior {
                        p_correct: update.p_correct,
                        response_dist: Discrete::point_mass(g.num_options[c.question], c.response),
                        t: update.t,
                    },
                })
            })
            .collect();
        Posteriors {
            participant_ids: g.participant_ids.clone(),
            question_ids: g.question_ids.clone(),
            answer: self.answer_log.iter().map(|l| normalized_probs(l)).collect(),
            ability: self
                .ability
                .iter()
                .zip(&g.ability_priors)
                .map(|(nat, prior)| nat.to_moments().unwrap_or(*prior))
                .collect(),
            difficulty: self
                .difficulty
                .iter()
                .zip(&g.difficulty_priors)
                .map(|(nat, prior)| nat.to_moments().unwrap_or(*prior))
                .collect(),
            precision,
            cells,
        }
    }
}

/// Runs damped EP sweeps until the marginals stop moving or `max_sweeps` is reached.
pub fn infer(graph: &DareGraph, config: &EpConfig) -> Result<InferenceReport> {
    config.validate()?;
    if graph.cells.is_empty() {
        return Ok(InferenceReport {
            posteriors: graph.prior_posteriors(),
            sweeps_used: 0,
            converged: true,
            max_residual: 0.0,
            diagnostics: Diagnostics::default(),
        });
    }
    let mut state = EpState::new(graph);
    let mut diagnostics = Diagnostics::default();
    let mut floor_sweeps = 0;
    let mut previous = state.snapshot();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        let mut floor_this_sweep = false;
        for index in 0..graph.cells.len() {
            floor_this_sweep |= state.update_cell(index, config, &mut diagnostics);
        }
        sweeps += 1;
        if floor_this_sweep {
            floor_sweeps += 1;
        }
        let current = state.snapshot();
        residual = previous.iter().zip(&current).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        previous = current;
        if residual <= config.convergence_eps {
            break;
        }
    }
    diagnostics.degenerate = floor_sweeps > 1;
    let converged = residual <= config.convergence_eps;
    if !converged {
        log::debug!("EP stopped after {sweeps} sweeps with residual {residual:e}");
    }
    Ok(InferenceReport {
        posteriors: state.posteriors(config.tau_quadrature_nodes),
        sweeps_used: sweeps,
        converged,
        max_residual: residual,
        diagnostics,
    })
}

/// `E[Φ(√τ (a - d))]` for independent Gaussian ability/difficulty and the given precision.
pub fn expected_prob_correct(ability: Gaussian1D, difficulty: Gaussian1D, precision: &PrecisionCavity, tau_nodes: usize) -> f64 {
    let mean_t = ability.mean - difficulty.mean;
    let var_t = ability.variance + difficulty.variance;
    precision_nodes(precision, tau_nodes)
        .iter()
        .map(|n| n.weight * std_normal_cdf(mean_t / (1.0 / n.tau + var_t).sqrt()))
        .sum()
}

/// Predictive response distribution `π p(y = k) + (1 - π)/K` for any cell,
/// observed or not, under the current marginals.
pub fn predictive_response(
    graph: &DareGraph,
    posteriors: &Posteriors,
    participant: usize,
    question: usize,
    tau_nodes: usize,
) -> Result<Discrete> {
    if participant >= graph.num_participants() {
        return Err(DareError::UnknownParticipant(format!("#{participant}")));
    }
    if question >= graph.num_questions() {
        return Err(DareError::UnknownQuestion(format!("#{question}")));
    }
    let precision = match graph.precision_priors[question] {
        PrecisionPrior::Fixed(tau) => PrecisionCavity::Fixed(tau),
        PrecisionPrior::Learned(_) => PrecisionCavity::Learned(posteriors.precision[question]),
    };
    let know = expected_prob_correct(posteriors.ability[participant], posteriors.difficulty[question], &precision, tau_nodes);
    let k = graph.num_options[question];
    let guess = (1.0 - know) / k as f64;
    let probs: Vec<f64> = posteriors.answer[question].probs.iter().map(|py| know * py + guess).collect();
    Ok(Discrete::from_weights(&probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_graph, DiscriminationMode, GoldSet, ModelVariant, PriorSpec, QuestionSpec, ResponseDataset, ResponseRecord};

    fn single_response(mode: DiscriminationMode) -> DareGraph {
        let data = ResponseDataset::new(vec![QuestionSpec::new("q", 2)], vec![ResponseRecord::new("p", "q", 1)]);
        build_graph(&data, &GoldSet::new(), &PriorSpec::default().with_discrimination(mode), ModelVariant::Full).unwrap()
    }

    #[test]
    fn cold_start_symmetry() {
        for mode in [DiscriminationMode::Fixed(1.0), DiscriminationMode::Learned] {
            let report = infer(&single_response(mode), &EpConfig::default()).unwrap();
            let ans = &report.posteriors.answer[0];
            assert!((ans.probs[1] - 0.75).abs() < 1e-2, "{mode:?}: {ans:?}");
            assert!(report.converged);
        }
    }

    #[test]
    fn empty_evidence_returns_priors() {
        let data = ResponseDataset::new(vec![QuestionSpec::new("q", 3)], vec![]).with_participants(["p"]);
        let graph = build_graph(&data, &GoldSet::new(), &PriorSpec::default(), ModelVariant::Full).unwrap();
        let report = infer(&graph, &EpConfig::default()).unwrap();
        assert_eq!(report.posteriors, graph.prior_posteriors());
    }

    fn cavity(answer: Discrete, response: usize) -> CellCavity {
        CellCavity {
            ability: Gaussian1D::new(0.0, 0.5).unwrap(),
            difficulty: Gaussian1D::new(0.0, 0.5).unwrap(),
            precision: PrecisionCavity::Fixed(1.0),
            answer,
            response,
        }
    }

    #[test]
    fn gold_match_raises_p_correct() {
        let update = cell_message_update(&cavity(Discrete::point_mass(2, 1), 1), 32).unwrap();
        assert!((update.p_correct - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gold_mismatch_is_probit_false() {
        let c = cavity(Discrete::point_mass(2, 0), 1);
        let update = cell_message_update(&c, 32).unwrap();
        assert_eq!(update.p_correct, 0.0);
        let t_prior = Gaussian1D::new(0.0, 1.0).unwrap();
        let expected = crate::prob::probit_factor_moments(t_prior, 1.0, false).unwrap();
        assert!((update.t.mean - expected.mean).abs() < 1e-12);
        assert!((update.t.variance - expected.variance).abs() < 1e-12);
    }

    #[test]
    fn extreme_mismatch_is_finite() {
        let c = CellCavity {
            ability: Gaussian1D::new(40.0, 0.01).unwrap(),
            difficulty: Gaussian1D::new(-5.0, 0.01).unwrap(),
            precision: PrecisionCavity::Fixed(1.0),
            answer: Discrete::point_mass(4, 0),
            response: 2,
        };
        // Φ(-z) with z ≈ 45 is below the negligible threshold
        assert!(matches!(cell_message_update(&c, 32), Err(DareError::NegligibleEvidence(_))));
        let c = CellCavity { ability: Gaussian1D::new(12.0, 0.01).unwrap(), ..c };
        let u = cell_message_update(&c, 32).unwrap();
        assert!(u.ability.mean.is_finite() && u.ability.variance > 0.0 && u.ability.mean < 12.0);
    }

    #[test]
    fn quadrature_nodes_integrate_gamma_moments() {
        for &(shape, scale) in &[(2.0, 0.5), (0.7, 3.0), (15.0, 0.1), (400.0, 0.01), (1e6, 1e-6)] {
            let g = GammaDist::new(shape, scale).unwrap();
            let nodes = gamma_quadrature_nodes(&g, 32);
            let mean: f64 = nodes.iter().map(|(t, w)| t * w).sum();
            let var: f64 = nodes.iter().map(|(t, w)| (t - mean).powi(2) * w).sum();
            assert!(((mean - g.mean()) / g.mean()).abs() < 2e-4, "shape {shape}: mean {mean}");
            assert!(((var - g.variance()) / g.variance()).abs() < 1e-3, "shape {shape}: var {var}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(EpConfig { damping: 0.0, ..EpConfig::default() }.validate().is_err());
        assert!(EpConfig { damping: 1.0, ..EpConfig::default() }.validate().is_ok());
        assert!(EpConfig { max_sweeps: 0, ..EpConfig::default() }.validate().is_err());
        assert!(EpConfig { convergence_eps: 0.0, ..EpConfig::default() }.validate().is_err());
    }

    #[test]
    fn predictive_prior_only_is_uniform() {
        let data = ResponseDataset::new(vec![QuestionSpec::new("q", 4)], vec![]).with_participants(["p"]);
        let graph = build_graph(&data, &GoldSet::new(), &PriorSpec::default(), ModelVariant::Full).unwrap();
        let post = graph.prior_posteriors();
        let pred = predictive_response(&graph, &post, 0, 0, 32).unwrap();
        for p in pred.probs {
            assert!((p - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn predictive_confident_participant() {
        let data = ResponseDataset::new(vec![QuestionSpec::new("q", 4)], vec![]).with_participants(["p"]);
        let mut gold = GoldSet::new();
        gold.insert("q", 2);
        let graph = build_graph(&data, &gold, &PriorSpec::default().with_discrimination(DiscriminationMode::Fixed(1.0)), ModelVariant::Full).unwrap();
        let mut post = graph.prior_posteriors();
        post.ability[0] = Gaussian1D::new(6.0, 1e-6).unwrap();
        post.difficulty[0] = Gaussian1D::point_mass(0.0);
        let pred = predictive_response(&graph, &post, 0, 0, 32).unwrap();
        assert!(pred.probs[2] >= 0.99);
        assert!((pred.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

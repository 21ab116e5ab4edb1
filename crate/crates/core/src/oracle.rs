//! Brute-force posteriors for tiny instances.
//!
//! Abilities are integrated on a tensor grid; for every ability configuration
//! each question column is independent, so its difficulty, precision, answer
//! and the knowledge indicators of its cells are summed out column by column.
//! Nothing here shares code with the message-passing engine beyond the graph
//! description and the normal CDF.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{DareError, Result};
use crate::model::{
    build_graph, CellEntry, CellPosterior, GoldSet, ModelVariant, Posteriors, PrecisionPrior, PriorSpec,
    ResponseDataset,
};
use crate::prob::{std_normal_cdf, Discrete, GammaDist, Gaussian1D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Grid nodes per continuous dimension.
    pub grid_points: usize,
    /// Half-width of each grid in prior standard deviations.
    pub grid_range: f64,
    /// Quantile nodes for a learned precision.
    pub tau_grid_points: usize,
    pub max_participants: usize,
    pub max_questions: usize,
    pub max_options: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid_points: 21, grid_range: 4.0, tau_grid_points: 15, max_participants: 3, max_questions: 3, max_options: 3 }
    }
}

/// Trapezoid nodes weighted by the Gaussian prior density; a clamped prior is a single node.
fn gaussian_grid(prior: Gaussian1D, points: usize, range: f64) -> Vec<(f64, f64)> {
    if prior.is_point_mass() {
        return vec![(prior.mean, 1.0)];
    }
    let sd = prior.std_dev();
    let (lo, hi) = (prior.mean - range * sd, prior.mean + range * sd);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            let x = lo + step * i as f64;
            let trap = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
            let z = (x - prior.mean) / sd;
            (x, trap * step * (-0.5 * z * z).exp())
        })
        .collect()
}

/// Equal-weight nodes at the Gamma quantiles `(i + ½)/n`.
fn tau_grid(prior: &PrecisionPrior, points: usize) -> Result<Vec<(f64, f64)>> {
    match *prior {
        PrecisionPrior::Fixed(tau) => Ok(vec![(tau, 1.0)]),
        PrecisionPrior::Learned(GammaDist { shape, scale }) => {
            let dist = Gamma::new(shape, 1.0 / scale).map_err(|e| DareError::InvalidParameter(e.to_string()))?;
            Ok((0..points)
                .map(|i| (dist.inverse_cdf((i as f64 + 0.5) / points as f64), 1.0 / points as f64))
                .collect())
        }
    }
}

/// Column sums for one question, given the abilities of its responders.
struct Column {
    total: f64,
    d1: f64,
    d2: f64,
    tau1: f64,
    tau2: f64,
    answer: Vec<f64>,
    /// Per responder: mass with the knowledge indicator on, and `t` moments.
    know: Vec<f64>,
    t1: Vec<f64>,
    t2: Vec<f64>,
}

struct ColumnInput<'a> {
    responders: &'a [(usize, usize)],
    answer_prior: &'a [f64],
    difficulty: &'a [(f64, f64)],
    tau: &'a [(f64, f64)],
}

fn column(input: &ColumnInput<'_>, abilities: &[f64]) -> Column {
    let k = input.answer_prior.len();
    let n = input.responders.len();
    let guess = 1.0 / k as f64;
    let mut col = Column {
        total: 0.0,
        d1: 0.0,
        d2: 0.0,
        tau1: 0.0,
        tau2: 0.0,
        answer: vec![0.0; k],
        know: vec![0.0; n],
        t1: vec![0.0; n],
        t2: vec![0.0; n],
    };
    let mut know_prob = vec![0.0; n];
    let mut lik = vec![0.0; n];
    for &(d, wd) in input.difficulty {
        for &(tau, wt) in input.tau {
            let root = tau.sqrt();
            for (j, &(p, _)) in input.responders.iter().enumerate() {
                know_prob[j] = std_normal_cdf(root * (abilities[p] - d));
            }
            for (y, &py) in input.answer_prior.iter().enumerate() {
                if py == 0.0 {
                    continue;
                }
                for (j, &(_, r)) in input.responders.iter().enumerate() {
                    let hit = if r == y { 1.0 } else { 0.0 };
                    lik[j] = know_prob[j] * hit + (1.0 - know_prob[j]) * guess;
                }
                let prod: f64 = lik.iter().product();
                let w = wd * wt * py * prod;
                col.total += w;
                col.d1 += w * d;
                col.d2 += w * d * d;
                col.tau1 += w * tau;
                col.tau2 += w * tau * tau;
                col.answer[y] += w;
                for (j, &(p, r)) in input.responders.iter().enumerate() {
                    let t = abilities[p] - d;
                    col.t1[j] += w * t;
                    col.t2[j] += w * t * t;
                    if r == y && lik[j] > 0.0 {
                        col.know[j] += w * know_prob[j] / lik[j];
                    }
                }
            }
        }
    }
    col
}

#[derive(Clone)]
struct Accumulator {
    z: f64,
    a1: Vec<f64>,
    a2: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    tau1: Vec<f64>,
    tau2: Vec<f64>,
    answer: Vec<Vec<f64>>,
    know: Vec<Vec<f64>>,
    t1: Vec<Vec<f64>>,
    t2: Vec<Vec<f64>>,
}

impl Accumulator {
    fn zero(p: usize, options: &[usize], responders: &[Vec<(usize, usize)>]) -> Self {
        let q = options.len();
        Self {
            z: 0.0,
            a1: vec![0.0; p],
            a2: vec![0.0; p],
            d1: vec![0.0; q],
            d2: vec![0.0; q],
            tau1: vec![0.0; q],
            tau2: vec![0.0; q],
            answer: options.iter().map(|&k| vec![0.0; k]).collect(),
            know: responders.iter().map(|r| vec![0.0; r.len()]).collect(),
            t1: responders.iter().map(|r| vec![0.0; r.len()]).collect(),
            t2: responders.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Accumulator) {
        fn add_vec(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.z += other.z;
        add_vec(&mut self.a1, &other.a1);
        add_vec(&mut self.a2, &other.a2);
        add_vec(&mut self.d1, &other.d1);
        add_vec(&mut self.d2, &other.d2);
        add_vec(&mut self.tau1, &other.tau1);
        add_vec(&mut self.tau2, &other.tau2);
        for q in 0..self.answer.len() {
            add_vec(&mut self.answer[q], &other.answer[q]);
            add_vec(&mut self.know[q], &other.know[q]);
            add_vec(&mut self.t1[q], &other.t1[q]);
            add_vec(&mut self.t2[q], &other.t2[q]);
        }
    }
}

fn moments(sum: f64, sum_sq: f64, z: f64) -> (f64, f64) {
    let mean = sum / z;
    (mean, (sum_sq / z - mean * mean).max(0.0))
}

/// Exact posteriors (up to grid resolution) by enumeration and grid integration.
pub fn exact_posteriors(
    data: &ResponseDataset,
    gold: &GoldSet,
    priors: &PriorSpec,
    variant: ModelVariant,
    config: &OracleConfig,
) -> Result<Posteriors> {
    if config.grid_points < 11 {
        return Err(DareError::InvalidParameter(format!("grid_points must be at least 11, got {}", config.grid_points)));
    }
    let max_options = data.questions.iter().map(|q| q.num_options).max().unwrap_or(0);
    if data.participants.len() > config.max_participants
        || data.questions.len() > config.max_questions
        || max_options > config.max_options
    {
        return Err(DareError::InstanceTooLarge(format!(
            "{} participants x {} questions x {} options exceeds {} x {} x {}",
            data.participants.len(),
            data.questions.len(),
            max_options,
            config.max_participants,
            config.max_questions,
            config.max_options
        )));
    }
    let graph = build_graph(data, gold, priors, variant)?;
    let n_p = graph.num_participants();
    let n_q = graph.num_questions();

    let ability_grids: Vec<Vec<(f64, f64)>> =
        graph.ability_priors.iter().map(|&p| gaussian_grid(p, config.grid_points, config.grid_range)).collect();
    let difficulty_grids: Vec<Vec<(f64, f64)>> =
        graph.difficulty_priors.iter().map(|&p| gaussian_grid(p, config.grid_points, config.grid_range)).collect();
    let tau_grids: Vec<Vec<(f64, f64)>> =
        graph.precision_priors.iter().map(|p| tau_grid(p, config.tau_grid_points)).collect::<Result<_>>()?;
    let responders: Vec<Vec<(usize, usize)>> = (0..n_q)
        .map(|q| graph.cells.iter().filter(|c| c.question == q).map(|c| (c.participant, c.response)).collect())
        .collect();
    let inputs: Vec<ColumnInput<'_>> = (0..n_q)
        .map(|q| ColumnInput {
            responders: &responders[q],
            answer_prior: &graph.answer_priors[q].probs,
            difficulty: &difficulty_grids[q],
            tau: &tau_grids[q],
        })
        .collect();

    // Enumerate ability configurations in mixed radix.
    let sizes: Vec<usize> = ability_grids.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    let chunks: Vec<Accumulator> = (0..total)
        .into_par_iter()
        .chunks(256)
        .map(|indices| {
            let mut acc = Accumulator::zero(n_p, &graph.num_options, &responders);
            let mut abilities = vec![0.0; n_p];
            for flat in indices {
                let mut rest = flat;
                let mut weight = 1.0;
                for p in 0..n_p {
                    let (x, w) = ability_grids[p][rest % sizes[p]];
                    rest /= sizes[p];
                    abilities[p] = x;
                    weight *= w;
                }
                let cols: Vec<Column> = inputs.iter().map(|input| column(input, &abilities)).collect();
                let joint = weight * cols.iter().map(|c| c.total).product::<f64>();
                if joint == 0.0 {
                    continue;
                }
                acc.z += joint;
                for p in 0..n_p {
                    acc.a1[p] += joint * abilities[p];
                    acc.a2[p] += joint * abilities[p] * abilities[p];
                }
                for (q, col) in cols.iter().enumerate() {
                    let share = joint / col.total;
                    acc.d1[q] += share * col.d1;
                    acc.d2[q] += share * col.d2;
                    acc.tau1[q] += share * col.tau1;
                    acc.tau2[q] += share * col.tau2;
                    for (y, v) in col.answer.iter().enumerate() {
                        acc.answer[q][y] += share * v;
                    }
                    for j in 0..col.know.len() {
                        acc.know[q][j] += share * col.know[j];
                        acc.t1[q][j] += share * col.t1[j];
                        acc.t2[q][j] += share * col.t2[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = Accumulator::zero(n_p, &graph.num_options, &responders);
    for chunk in &chunks {
        acc.add(chunk);
    }
    let z = acc.z;

    let ability = (0..n_p)
        .map(|p| {
            if graph.ability_priors[p].is_point_mass() {
                return graph.ability_priors[p];
            }
            let (mean, variance) = moments(acc.a1[p], acc.a2[p], z);
            Gaussian1D { mean, variance }
        })
        .collect();
    let difficulty = (0..n_q)
        .map(|q| {
            if graph.difficulty_priors[q].is_point_mass() {
                return graph.difficulty_priors[q];
            }
            let (mean, variance) = moments(acc.d1[q], acc.d2[q], z);
            Gaussian1D { mean, variance }
        })
        .collect();
    let precision = (0..n_q)
        .map(|q| match graph.precision_priors[q] {
            PrecisionPrior::Fixed(tau) => GammaDist::point_mass(tau),
            PrecisionPrior::Learned(_) => {
                let (mean, variance) = moments(acc.tau1[q], acc.tau2[q], z);
                GammaDist::from_mean_variance(mean, variance).unwrap_or(GammaDist::point_mass(mean))
            }
        })
        .collect();
    let answer = acc.answer.iter().map(|w| Discrete::from_weights(w)).collect();
    let mut cells = Vec::new();
    for q in 0..n_q {
        for (j, &(p, r)) in responders[q].iter().enumerate() {
            let (mean, variance) = moments(acc.t1[q][j], acc.t2[q][j], z);
            cells.push(CellEntry {
                participant: p,
                question: q,
                posterior: CellPosterior {
                    p_correct: acc.know[q][j] / z,
                    response_dist: Discrete::point_mass(graph.num_options[q], r),
                    t: Gaussian1D { mean, variance: variance.max(f64::MIN_POSITIVE) },
                },
            });
        }
    }
    cells.sort_by_key(|c| (c.question, c.participant));

    Ok(Posteriors {
        participant_ids: graph.participant_ids,
        question_ids: graph.question_ids,
        answer,
        ability,
        difficulty,
        precision,
        cells,
    })
}

//! Adaptive testing: pick the question whose answer is expected to shrink the
//! participant's ability posterior the most, one question at a time.
//!
//! A session only infers the participant's ability. Every question of the bank
//! has its correct answer revealed and its difficulty and precision clamped to
//! values calibrated on a reference population.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep::{expected_prob_correct, infer, predictive_response, EpConfig, PrecisionCavity};
use crate::error::{DareError, Result};
use crate::model::{
    build_graph, Cell, DareGraph, GoldSet, ModelVariant, Posteriors, PrecisionPrior, PriorSpec, QuestionSpec,
    ResponseDataset,
};
use crate::prob::{Discrete, Gaussian1D};

/// Reduction in Gaussian entropy, in nats, when the variance goes from `before` to `after`.
pub fn entropy_reduction(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) || !(after > 0.0) {
        return Err(DareError::InvalidParameter(format!("variances must be positive, got {before} and {after}")));
    }
    Ok(0.5 * (before / after).ln())
}

/// Point estimates clamped for one question during a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionCalibration {
    pub difficulty: f64,
    pub precision: f64,
}

/// A fully gold-labelled question bank with calibrated question parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionBank {
    pub questions: Vec<QuestionSpec>,
    /// Gold option per question, in bank order.
    pub gold: Vec<usize>,
    pub calibration: Vec<QuestionCalibration>,
}

impl SessionBank {
    pub fn new(questions: Vec<QuestionSpec>, gold: &GoldSet, calibration: Vec<QuestionCalibration>) -> Result<Self> {
        if questions.is_empty() {
            return Err(DareError::InvalidDataset("question bank is empty".into()));
        }
        if calibration.len() != questions.len() {
            return Err(DareError::InvalidDataset(format!(
                "{} calibration entries for {} questions",
                calibration.len(),
                questions.len()
            )));
        }
        let violations = crate::model::validate(&ResponseDataset::new(questions.clone(), Vec::new()), gold);
        if let Some(v) = violations.first() {
            return Err(DareError::InvalidDataset(v.to_string()));
        }
        let gold = questions
            .iter()
            .map(|q| gold.get(&q.id).ok_or_else(|| DareError::InvalidDataset(format!("question {} has no gold answer", q.id))))
            .collect::<Result<Vec<_>>>()?;
        for (q, c) in questions.iter().zip(&calibration) {
            if !c.difficulty.is_finite() || !(c.precision > 0.0 && c.precision.is_finite()) {
                return Err(DareError::InvalidParameter(format!("bad calibration for question {}: {c:?}", q.id)));
            }
        }
        Ok(Self { questions, gold, calibration })
    }

    /// Calibrates on a reference population with every gold answer revealed.
    /// Responses from `exclude` are dropped first.
    pub fn calibrate(
        data: &ResponseDataset,
        gold: &GoldSet,
        priors: &PriorSpec,
        config: &EpConfig,
        exclude: Option<&str>,
    ) -> Result<Self> {
        let reference = match exclude {
            Some(p) => {
                let keep: Vec<String> = data.participants.iter().filter(|q| q.as_str() != p).cloned().collect();
                data.restrict_participants(&keep)
            }
            None => data.clone(),
        };
        let graph = build_graph(&reference, gold, priors, ModelVariant::Full)?;
        let post = infer(&graph, config)?.posteriors;
        let calibration = post
            .difficulty
            .iter()
            .zip(&post.precision)
            .map(|(d, tau)| QuestionCalibration { difficulty: d.mean, precision: tau.mean() })
            .collect();
        Self::new(data.questions.clone(), gold, calibration)
    }

    pub fn position(&self, question: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == question)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// Headline score of a candidate question and the per-response terms it sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub expected_entropy_reduction: f64,
    pub breakdown: Vec<ResponseBranch>,
    /// False when some branch failed to converge.
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseBranch {
    pub response: usize,
    pub probability: f64,
    pub variance_after: f64,
}

impl QuestionScore {
    /// Recomputes the headline number from the breakdown.
    pub fn from_breakdown(&self, variance_before: f64) -> f64 {
        0.5 * self.breakdown.iter().map(|b| b.probability * (variance_before / b.variance_after).ln()).sum::<f64>()
    }
}

/// One participant's adaptive test. Transitions return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub participant_id: String,
    pub bank: Arc<SessionBank>,
    pub ability_prior: Gaussian1D,
    pub config: EpConfig,
    pub budget: usize,
    pub asked: Vec<(String, usize)>,
    pub ability: Gaussian1D,
}

impl SessionState {
    pub fn new(
        participant_id: impl Into<String>,
        bank: Arc<SessionBank>,
        ability_prior: Gaussian1D,
        budget: usize,
        config: EpConfig,
    ) -> Result<Self> {
        config.validate()?;
        if ability_prior.is_point_mass() {
            return Err(DareError::InvalidParameter("ability prior must have positive variance".into()));
        }
        if budget == 0 || budget > bank.len() {
            return Err(DareError::InvalidParameter(format!("budget {budget} outside 1..={}", bank.len())));
        }
        Ok(Self {
            participant_id: participant_id.into(),
            bank,
            ability_prior,
            config,
            budget,
            asked: Vec::new(),
            ability: ability_prior,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.asked.len() >= self.budget
    }

    pub fn is_asked(&self, question: &str) -> bool {
        self.asked.iter().any(|(q, _)| q == question)
    }

    /// Single-participant graph over the whole bank with answers, difficulties
    /// and precisions clamped.
    pub fn graph(&self) -> DareGraph {
        let bank = &self.bank;
        let mut cells: Vec<Cell> = self
            .asked
            .iter()
            .map(|(q, r)| Cell { question: bank.position(q).expect("asked questions are in the bank"), participant: 0, response: *r })
            .collect();
        cells.sort();
        DareGraph {
            participant_ids: vec![self.participant_id.clone()],
            question_ids: bank.questions.iter().map(|q| q.id.clone()).collect(),
            num_options: bank.questions.iter().map(|q| q.num_options).collect(),
            ability_priors: vec![self.ability_prior],
            difficulty_priors: bank.calibration.iter().map(|c| Gaussian1D::point_mass(c.difficulty)).collect(),
            precision_priors: bank.calibration.iter().map(|c| PrecisionPrior::Fixed(c.precision)).collect(),
            answer_priors: bank.questions.iter().zip(&bank.gold).map(|(q, &g)| Discrete::point_mass(q.num_options, g)).collect(),
            cells,
        }
    }

    fn posteriors(&self) -> Posteriors {
        let mut post = self.graph().prior_posteriors();
        post.ability[0] = self.ability;
        post
    }

    fn check_candidate(&self, question: &str) -> Result<usize> {
        let q = self.bank.position(question).ok_or_else(|| DareError::UnknownQuestion(question.to_string()))?;
        if self.is_asked(question) {
            return Err(DareError::Session(format!("question {question} was already answered")));
        }
        Ok(q)
    }

    /// Ability posterior and convergence flag after adding one hypothetical response.
    fn branch(&self, graph: &DareGraph, question: usize, response: usize) -> Result<(Gaussian1D, bool)> {
        let report = infer(&graph.with_cell(Cell { question, participant: 0, response }), &self.config)?;
        Ok((report.posteriors.ability[0], report.converged))
    }

    /// Predictive response distribution for an unasked question.
    pub fn predictive(&self, question: &str) -> Result<Discrete> {
        let q = self.check_candidate(question)?;
        predictive_response(&self.graph(), &self.posteriors(), 0, q, self.config.tau_quadrature_nodes)
    }

    pub fn score_question(&self, question: &str) -> Result<QuestionScore> {
        let q = self.check_candidate(question)?;
        let graph = self.graph();
        let predictive = predictive_response(&graph, &self.posteriors(), 0, q, self.config.tau_quadrature_nodes)?;
        let gold = self.bank.gold[q];
        let wrong = (0..predictive.len()).find(|&r| r != gold).expect("at least two options");
        // Every wrong response carries the same likelihood, so one branch serves them all.
        let (right_post, right_ok) = self.branch(&graph, q, gold)?;
        let (wrong_post, wrong_ok) = self.branch(&graph, q, wrong)?;
        let before = self.ability.variance;
        let mut total = 0.0;
        let breakdown: Vec<ResponseBranch> = predictive
            .probs
            .iter()
            .enumerate()
            .map(|(r, &probability)| {
                let variance_after = if r == gold { right_post.variance } else { wrong_post.variance };
                ResponseBranch { response: r, probability, variance_after }
            })
            .collect();
        for b in &breakdown {
            total += b.probability * entropy_reduction(before, b.variance_after)?;
        }
        Ok(QuestionScore {
            question_id: question.to_string(),
            expected_entropy_reduction: total,
            breakdown,
            reliable: right_ok && wrong_ok,
        })
    }

    /// Scores of every unasked question, in bank order.
    pub fn score_all(&self) -> Vec<Result<QuestionScore>> {
        let candidates: Vec<&str> =
            self.bank.questions.iter().map(|q| q.id.as_str()).filter(|q| !self.is_asked(q)).collect();
        candidates.par_iter().map(|q| self.score_question(q)).collect()
    }

    /// Highest-scoring reliable unasked question; ties go to the lowest id.
    pub fn next_question(&self) -> Result<QuestionScore> {
        if self.is_finished() {
            return Err(DareError::SessionExhausted);
        }
        let mut best: Option<QuestionScore> = None;
        for score in self.score_all() {
            let score = match score {
                Ok(s) if s.reliable => s,
                Ok(s) => {
                    log::warn!("skipping question {}: a response branch did not converge", s.question_id);
                    continue;
                }
                Err(e) => {
                    log::warn!("skipping unscorable question: {e}");
                    continue;
                }
            };
            if score.expected_entropy_reduction < 0.0 {
                log::debug!("question {} has negative expected reduction {}", score.question_id, score.expected_entropy_reduction);
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    score.expected_entropy_reduction > b.expected_entropy_reduction
                        || (score.expected_entropy_reduction == b.expected_entropy_reduction && score.question_id < b.question_id)
                }
            };
            if better {
                best = Some(score);
            }
        }
        best.ok_or(DareError::SessionExhausted)
    }

    pub fn submit_response(&self, question: &str, response: usize) -> Result<SessionState> {
        if self.is_finished() {
            return Err(DareError::SessionExhausted);
        }
        let q = self.check_candidate(question)?;
        let k = self.bank.questions[q].num_options;
        if response >= k {
            return Err(DareError::OptionOutOfRange { question: question.to_string(), option: response, num_options: k });
        }
        let mut next = self.clone();
        next.asked.push((question.to_string(), response));
        next.ability = infer(&next.graph(), &self.config)?.posteriors.ability[0];
        Ok(next)
    }

    /// Correct answers so far plus the expected number correct on the rest.
    pub fn estimate_raw_score(&self) -> f64 {
        let bank = &self.bank;
        bank.questions
            .iter()
            .enumerate()
            .map(|(q, spec)| match self.asked.iter().find(|(id, _)| *id == spec.id) {
                Some((_, r)) => f64::from(u8::from(*r == bank.gold[q])),
                None => {
                    let c = bank.calibration[q];
                    let know = expected_prob_correct(
                        self.ability,
                        Gaussian1D::point_mass(c.difficulty),
                        &PrecisionCavity::Fixed(c.precision),
                        self.config.tau_quadrature_nodes,
                    );
                    know + (1.0 - know) / spec.num_options as f64
                }
            })
            .sum()
    }
}

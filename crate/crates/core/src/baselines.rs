//! Reference aggregators, raw scores and the static question-set heuristic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::ep::{infer, EpConfig};
use crate::error::{DareError, Result};
use crate::model::{build_graph, GoldSet, ModelVariant, Posteriors, PriorSpec, ResponseDataset};

/// Modal response per question in bank order; `None` when nobody answered.
///
/// Ties go to the lowest option index.
pub fn majority_vote(data: &ResponseDataset) -> Vec<Option<usize>> {
    let index = data.question_index();
    let mut counts: Vec<Vec<usize>> = data.questions.iter().map(|q| vec![0; q.num_options]).collect();
    for r in &data.records {
        if let Some(&q) = index.get(r.question.as_str()) {
            if let Some(slot) = counts[q].get_mut(r.response) {
                *slot += 1;
            }
        }
    }
    counts
        .iter()
        .map(|c| {
            let best = *c.iter().max()?;
            if best == 0 {
                return None;
            }
            c.iter().position(|&n| n == best)
        })
        .collect()
}

/// Runs inference under one of the model variants.
pub fn infer_variant(
    data: &ResponseDataset,
    gold: &GoldSet,
    priors: &PriorSpec,
    variant: ModelVariant,
    config: &EpConfig,
) -> Result<Posteriors> {
    let graph = build_graph(data, gold, priors, variant)?;
    Ok(infer(&graph, config)?.posteriors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantScore {
    pub participant: String,
    /// Responses matching the true answer.
    pub raw_score: usize,
    /// Responses matching the inferred answer.
    pub model_raw_score: usize,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<ParticipantScore>,
}

impl ScoreVector {
    pub fn raw(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.raw_score as f64).collect()
    }

    pub fn model_raw(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.model_raw_score as f64).collect()
    }
}

/// Raw and model raw scores for every participant in `data`.
///
/// Responses to questions without a gold entry do not count toward the raw score.
pub fn model_raw_scores(data: &ResponseDataset, gold: &GoldSet, posteriors: &Posteriors) -> ScoreVector {
    let inferred: std::collections::HashMap<&str, usize> =
        posteriors.question_ids.iter().map(String::as_str).zip(posteriors.inferred_answers()).collect();
    let index = data.participant_index();
    let mut scores: Vec<ParticipantScore> = data
        .participants
        .iter()
        .map(|p| ParticipantScore { participant: p.clone(), raw_score: 0, model_raw_score: 0, responses: 0 })
        .collect();
    for r in &data.records {
        let Some(&p) = index.get(r.participant.as_str()) else { continue };
        let s = &mut scores[p];
        s.responses += 1;
        if gold.get(&r.question) == Some(r.response) {
            s.raw_score += 1;
        }
        if inferred.get(r.question.as_str()) == Some(&r.response) {
            s.model_raw_score += 1;
        }
    }
    ScoreVector { scores }
}

/// Fraction of responders who chose the gold answer, per question in bank
/// order; `None` for questions nobody answered.
pub fn solve_rates(data: &ResponseDataset, gold: &GoldSet) -> Vec<Option<f64>> {
    let index = data.question_index();
    let mut hits = vec![0usize; data.questions.len()];
    let mut seen = vec![0usize; data.questions.len()];
    for r in &data.records {
        if let Some(&q) = index.get(r.question.as_str()) {
            seen[q] += 1;
            if gold.get(&r.question) == Some(r.response) {
                hits[q] += 1;
            }
        }
    }
    hits.iter().zip(&seen).map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64)).collect()
}

/// Picks `budget` questions whose solve rates are nearest the targets
/// `i/(budget+1)`, one target at a time in increasing order.
///
/// Questions nobody answered are only used once every answered question is taken.
pub fn static_question_set(data: &ResponseDataset, gold: &GoldSet, budget: usize) -> Result<Vec<String>> {
    let n = data.questions.len();
    if budget > n {
        return Err(DareError::InvalidParameter(format!("budget {budget} exceeds the {n} questions in the bank")));
    }
    if let Some(q) = data.questions.iter().find(|q| gold.get(&q.id).is_none()) {
        return Err(DareError::InvalidDataset(format!("question {} has no gold answer", q.id)));
    }
    let rates = solve_rates(data, gold);
    let mut used = vec![false; n];
    let mut chosen = Vec::with_capacity(budget);
    for i in 1..=budget {
        let target = i as f64 / (budget + 1) as f64;
        let distance = |q: usize| rates[q].map_or(f64::INFINITY, |r| (r - target).abs());
        let best = (0..n)
            .filter(|&q| !used[q])
            .min_by(|&a, &b| {
                distance(a)
                    .partial_cmp(&distance(b))
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| data.questions[a].id.cmp(&data.questions[b].id))
            })
            .expect("budget does not exceed the number of questions");
        used[best] = true;
        chosen.push(data.questions[best].id.clone());
    }
    Ok(chosen)
}

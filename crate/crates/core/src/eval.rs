//! Scripted experiments on synthetic or loaded populations, and the metrics
//! they report.
//!
//! Every random choice (crowd subsets, revealed questions) comes from a
//! ChaCha stream keyed by the experiment seed and the `(setting, repetition)`
//! pair, so repetitions can run in any order and still reproduce exactly.

use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive::{SessionBank, SessionState};
use crate::baselines::{infer_variant, majority_vote, model_raw_scores, static_question_set};
use crate::ep::EpConfig;
use crate::error::{DareError, Result};
use crate::model::{GoldSet, ModelVariant, PriorSpec, ResponseDataset};
use crate::synth::{sample, SynthConfig};

pub fn rmse(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    check_pairs(estimates, truth)?;
    let mse = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse.sqrt())
}

/// Squared Pearson correlation.
pub fn r_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(DareError::UndefinedStatistic("R² needs both score vectors to vary".into()));
    }
    Ok(sxy * sxy / (sxx * syy))
}

/// Number of positions where `predicted` equals `truth`; `None` never matches.
pub fn correct_count(predicted: &[Option<usize>], truth: &[usize]) -> Result<usize> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(DareError::UndefinedStatistic(format!(
            "accuracy over {} predictions and {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(predicted.iter().zip(truth).filter(|(p, t)| **p == Some(**t)).count())
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[Option<usize>], truth: &[usize]) -> Result<f64> {
    Ok(correct_count(predicted, truth)? as f64 / truth.len() as f64)
}

fn check_pairs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(DareError::UndefinedStatistic(format!("need equal nonempty inputs, got {} and {}", a.len(), b.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    CrowdCurve,
    GoldCurve,
    ScatterSkill,
    AdaptiveVsStatic,
}

#[derive(Debug, Clone, Serialize)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Dataset {
        label: String,
        #[serde(skip)]
        data: ResponseDataset,
        #[serde(skip)]
        gold: GoldSet,
    },
}

impl DataSource {
    fn load(&self) -> Result<(ResponseDataset, GoldSet)> {
        match self {
            DataSource::Synthetic(cfg) => {
                let s = sample(cfg)?;
                Ok((s.data, s.gold))
            }
            DataSource::Dataset { data, gold, .. } => Ok((data.clone(), gold.clone())),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub source: DataSource,
    pub priors: PriorSpec,
    pub ep: EpConfig,
    pub repetitions: usize,
    /// Crowd sizes, reveal counts or budgets, depending on the experiment.
    pub settings: Vec<usize>,
    /// Crowd size used by the gold curve.
    pub crowd_size: usize,
    /// Scatter only: reveal every gold answer to the model.
    pub reveal_gold: bool,
    pub seed: u64,
}

impl ExperimentSpec {
    /// Defaults for `experiment` on the synthetic 120 x 60 x 8 population.
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        let settings = match experiment {
            Experiment::CrowdCurve => vec![1, 2, 5, 10, 20, 40],
            Experiment::GoldCurve => vec![0, 5, 10, 20, 30, 40, 50],
            Experiment::ScatterSkill => Vec::new(),
            Experiment::AdaptiveVsStatic => vec![2, 5, 10, 20],
        };
        Self {
            experiment,
            source: DataSource::Synthetic(SynthConfig::population(seed)),
            priors: PriorSpec::default(),
            ep: EpConfig::default(),
            repetitions: 200,
            settings,
            crowd_size: 20,
            reveal_gold: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ep.validate()?;
        self.priors.validate()?;
        if self.repetitions == 0 {
            return Err(DareError::InvalidParameter("repetitions must be at least 1".into()));
        }
        if self.experiment != Experiment::ScatterSkill {
            if self.settings.is_empty() {
                return Err(DareError::InvalidParameter("settings list is empty".into()));
            }
            if self.settings.windows(2).any(|w| w[0] >= w[1]) {
                return Err(DareError::InvalidParameter(format!("settings must be strictly increasing: {:?}", self.settings)));
            }
        }
        Ok(())
    }
}

/// Mean and spread of one series at one setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub series: String,
    pub setting: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// One repetition (or participant) of one series at one setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub series: String,
    pub setting: usize,
    pub replicate: usize,
    pub value: f64,
    /// Second coordinate for scatter rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub experiment: Experiment,
    pub metric: String,
    pub summaries: Vec<Summary>,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn summary(&self, series: &str, setting: usize) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.series == series && s.setting == setting)
    }

    /// Summaries of one series in setting order.
    pub fn series(&self, series: &str) -> Vec<&Summary> {
        self.summaries.iter().filter(|s| s.series == series).collect()
    }
}

fn summarize(series: &str, setting: usize, values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Summary {
        series: series.to_string(),
        setting,
        mean,
        std: var.sqrt(),
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        count: values.len(),
    }
}

const CROWD_STREAM: u64 = 5;
const REVEAL_STREAM: u64 = 6;

fn keyed_rng(seed: u64, kind: u64, setting: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 56) | ((setting as u64 & 0x0fff_ffff) << 28) | (replicate as u64 & 0x0fff_ffff));
    rng
}

/// Sorted random subset of `size` indices out of `n`.
fn subset(seed: u64, kind: u64, n: usize, size: usize, replicate: usize) -> Vec<usize> {
    let mut picked = sample_indices(&mut keyed_rng(seed, kind, size, replicate), n, size).into_vec();
    picked.sort_unstable();
    picked
}

fn crowd(data: &ResponseDataset, seed: u64, size: usize, replicate: usize) -> Result<ResponseDataset> {
    let n = data.participants.len();
    if size == 0 || size > n {
        return Err(DareError::InvalidParameter(format!("crowd size {size} outside 1..={n}")));
    }
    let keep: Vec<String> = subset(seed, CROWD_STREAM, n, size, replicate).into_iter().map(|i| data.participants[i].clone()).collect();
    Ok(data.restrict_participants(&keep))
}

fn gold_vector(data: &ResponseDataset, gold: &GoldSet) -> Result<Vec<usize>> {
    data.questions
        .iter()
        .map(|q| gold.get(&q.id).ok_or_else(|| DareError::InvalidDataset(format!("question {} has no gold answer", q.id))))
        .collect()
}

const CROWD_SERIES: [&str; 4] = ["full", "participant_only", "question_only", "majority"];

/// Correct inferred answers per crowd size for the full model, both
/// simplified variants and majority vote.
pub fn run_crowd_curve(spec: &ExperimentSpec) -> Result<MetricReport> {
    spec.validate()?;
    let (data, gold) = spec.source.load()?;
    let truth = gold_vector(&data, &gold)?;
    let n = data.participants.len();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for &size in &spec.settings {
        if size == 0 || size > n {
            return Err(DareError::InvalidParameter(format!("crowd size {size} exceeds the population of {n}")));
        }
        // Every subset of the full population is the same subset.
        let reps = if size == n { 1 } else { spec.repetitions };
        let counts: Vec<[f64; 4]> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let sub = crowd(&data, spec.seed, size, rep)?;
                let correct = |answers: Vec<Option<usize>>| correct_count(&answers, &truth).map(|n| n as f64);
                let mut out = [0.0; 4];
                for (slot, variant) in [ModelVariant::Full, ModelVariant::ParticipantOnly, ModelVariant::QuestionOnly].iter().enumerate() {
                    let post = infer_variant(&sub, &GoldSet::new(), &spec.priors, *variant, &spec.ep)?;
                    out[slot] = correct(post.inferred_answers().into_iter().map(Some).collect())?;
                }
                out[3] = correct(majority_vote(&sub))?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (s, series) in CROWD_SERIES.iter().enumerate() {
            let values: Vec<f64> = counts.iter().map(|c| c[s]).collect();
            summaries.push(summarize(series, size, &values));
            rows.extend(values.iter().enumerate().map(|(rep, &value)| Row {
                series: series.to_string(),
                setting: size,
                replicate: rep,
                value,
                paired: None,
            }));
        }
    }
    Ok(MetricReport { experiment: Experiment::CrowdCurve, metric: "correct_answers".into(), summaries, rows, notes: Vec::new() })
}

/// Accuracy on the unrevealed questions as the number of revealed gold answers grows.
pub fn run_gold_curve(spec: &ExperimentSpec) -> Result<MetricReport> {
    spec.validate()?;
    let (data, gold) = spec.source.load()?;
    let truth = gold_vector(&data, &gold)?;
    let q = data.questions.len();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for &reveal in &spec.settings {
        if reveal >= q {
            return Err(DareError::InvalidParameter(format!("reveal count {reveal} must be below the {q} questions")));
        }
        let values: Vec<f64> = (0..spec.repetitions)
            .into_par_iter()
            .map(|rep| {
                let sub = crowd(&data, spec.seed, spec.crowd_size, rep)?;
                let revealed = if reveal == 0 { Vec::new() } else { subset(spec.seed, REVEAL_STREAM, q, reveal, rep) };
                let shown: GoldSet = revealed.iter().map(|&i| (data.questions[i].id.clone(), truth[i])).collect();
                let post = infer_variant(&sub, &shown, &spec.priors, ModelVariant::Full, &spec.ep)?;
                let inferred = post.inferred_answers();
                let (predicted, expected): (Vec<Option<usize>>, Vec<usize>) = (0..q)
                    .filter(|i| revealed.binary_search(i).is_err())
                    .map(|i| (Some(inferred[i]), truth[i]))
                    .unzip();
                accuracy(&predicted, &expected)
            })
            .collect::<Result<_>>()?;
        summaries.push(summarize("full", reveal, &values));
        rows.extend(values.iter().enumerate().map(|(rep, &value)| Row {
            series: "full".into(),
            setting: reveal,
            replicate: rep,
            value,
            paired: None,
        }));
    }
    Ok(MetricReport { experiment: Experiment::GoldCurve, metric: "remaining_accuracy".into(), summaries, rows, notes: Vec::new() })
}

/// Raw against model raw score for every participant, and their R².
pub fn run_scatter_skill(spec: &ExperimentSpec) -> Result<MetricReport> {
    spec.validate()?;
    let (data, gold) = spec.source.load()?;
    let shown = if spec.reveal_gold { gold.clone() } else { GoldSet::new() };
    let post = infer_variant(&data, &shown, &spec.priors, ModelVariant::Full, &spec.ep)?;
    let scores = model_raw_scores(&data, &gold, &post);
    let (raw, model) = (scores.raw(), scores.model_raw());
    let rows = raw
        .iter()
        .zip(&model)
        .enumerate()
        .map(|(i, (&r, &m))| Row { series: "scores".into(), setting: 0, replicate: i, value: r, paired: Some(m) })
        .collect();
    let mut summaries = Vec::new();
    let mut notes = Vec::new();
    match r_squared(&raw, &model) {
        Ok(r2) => summaries.push(Summary {
            series: "r_squared".into(),
            setting: 0,
            mean: r2,
            std: 0.0,
            min: r2,
            max: r2,
            count: raw.len(),
        }),
        Err(e) => notes.push(format!("r_squared undefined: {e}")),
    }
    Ok(MetricReport { experiment: Experiment::ScatterSkill, metric: "r_squared".into(), summaries, rows, notes })
}

/// Leave-one-out replay of every participant through adaptive and static tests.
///
/// Both arms use the same session engine and raw-score estimator; they differ
/// only in which questions are asked. The reported spread is the standard
/// deviation of absolute errors across participants.
pub fn run_adaptive_vs_static(spec: &ExperimentSpec) -> Result<MetricReport> {
    spec.validate()?;
    let (data, gold) = spec.source.load()?;
    let truth = gold_vector(&data, &gold)?;
    let q = data.questions.len();
    if let Some(&b) = spec.settings.iter().find(|&&b| b == 0 || b > q) {
        return Err(DareError::InvalidParameter(format!("budget {b} outside 1..={q}")));
    }
    let max_budget = *spec.settings.last().expect("validated nonempty");
    let static_sets: Vec<Vec<String>> =
        spec.settings.iter().map(|&b| static_question_set(&data, &gold, b)).collect::<Result<_>>()?;

    let q_index = data.question_index();
    let p_index = data.participant_index();
    let mut responses = vec![vec![None; q]; data.participants.len()];
    for r in &data.records {
        responses[p_index[r.participant.as_str()]][q_index[r.question.as_str()]] = Some(r.response);
    }
    if let Some(p) = responses.iter().position(|row| row.iter().any(Option::is_none)) {
        return Err(DareError::InvalidDataset(format!(
            "participant {} did not answer every question; replay needs a complete matrix",
            data.participants[p]
        )));
    }
    let answered = |p: usize, question: &str| responses[p][q_index[question]].expect("complete matrix");

    // Per participant: (true raw score, adaptive estimates, static estimates) by budget.
    let per_participant: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..data.participants.len())
        .into_par_iter()
        .map(|p| {
            let pid = &data.participants[p];
            let bank = Arc::new(SessionBank::calibrate(&data, &gold, &spec.priors, &spec.ep, Some(pid))?);
            let raw = (0..q).filter(|&i| responses[p][i] == Some(truth[i])).count() as f64;

            let mut state = SessionState::new(pid.clone(), bank.clone(), spec.priors.ability, max_budget, spec.ep)?;
            let mut adaptive = Vec::with_capacity(spec.settings.len());
            for step in 1..=max_budget {
                let next = state.next_question()?;
                state = state.submit_response(&next.question_id, answered(p, &next.question_id))?;
                if spec.settings.contains(&step) {
                    adaptive.push(state.estimate_raw_score());
                }
            }

            let mut fixed = Vec::with_capacity(spec.settings.len());
            for (&b, set) in spec.settings.iter().zip(&static_sets) {
                let mut state = SessionState::new(pid.clone(), bank.clone(), spec.priors.ability, b, spec.ep)?;
                for question in set {
                    state = state.submit_response(question, answered(p, question))?;
                }
                fixed.push(state.estimate_raw_score());
            }
            Ok((raw, adaptive, fixed))
        })
        .collect::<Result<_>>()?;

    let truth_scores: Vec<f64> = per_participant.iter().map(|r| r.0).collect();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (arm, pick) in [("adaptive", 1usize), ("static", 2usize)] {
        for (j, &b) in spec.settings.iter().enumerate() {
            let estimates: Vec<f64> =
                per_participant.iter().map(|r| if pick == 1 { r.1[j] } else { r.2[j] }).collect();
            let abs_err: Vec<f64> = estimates.iter().zip(&truth_scores).map(|(e, t)| (e - t).abs()).collect();
            let mut summary = summarize(arm, b, &abs_err);
            summary.mean = rmse(&estimates, &truth_scores)?;
            summaries.push(summary);
            rows.extend(abs_err.iter().enumerate().map(|(i, &value)| Row {
                series: arm.to_string(),
                setting: b,
                replicate: i,
                value,
                paired: Some(estimates[i]),
            }));
        }
    }
    Ok(MetricReport { experiment: Experiment::AdaptiveVsStatic, metric: "rmse".into(), summaries, rows, notes: Vec::new() })
}

pub fn run(spec: &ExperimentSpec) -> Result<MetricReport> {
    match spec.experiment {
        Experiment::CrowdCurve => run_crowd_curve(spec),
        Experiment::GoldCurve => run_gold_curve(spec),
        Experiment::ScatterSkill => run_scatter_skill(spec),
        Experiment::AdaptiveVsStatic => run_adaptive_vs_static(spec),
    }
}

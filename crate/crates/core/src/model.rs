//! Data model of a multiple-choice response matrix and the declarative
//! factor-graph description consumed by the inference engines.
//!
//! Each observed `(participant, question)` cell becomes one gated factor
//! linking the participant's ability, the question's difficulty and
//! discrimination, and the question's correct answer. Observed answers (gold)
//! and model-variant simplifications are expressed as point-mass priors so
//! every engine treats clamped and latent variables the same way.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};
use crate::prob::{Discrete, GammaDist, Gaussian1D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub num_options: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_texts: Option<Vec<String>>,
}

impl QuestionSpec {
    pub fn new(id: impl Into<String>, num_options: usize) -> Self {
        Self { id: id.into(), num_options, text: None, option_texts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant: String,
    pub question: String,
    pub response: usize,
}

impl ResponseRecord {
    pub fn new(participant: impl Into<String>, question: impl Into<String>, response: usize) -> Self {
        Self { participant: participant.into(), question: question.into(), response }
    }
}

/// Sparse set of participant-question-response triples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseDataset {
    pub questions: Vec<QuestionSpec>,
    pub participants: Vec<String>,
    pub records: Vec<ResponseRecord>,
}

impl ResponseDataset {
    /// Builds a dataset whose participant roster is every id seen in `records`,
    /// in order of first appearance.
    pub fn new(questions: Vec<QuestionSpec>, records: Vec<ResponseRecord>) -> Self {
        let mut seen = HashSet::new();
        let participants = records
            .iter()
            .filter(|r| seen.insert(r.participant.clone()))
            .map(|r| r.participant.clone())
            .collect();
        Self { questions, participants, records }
    }

    /// Adds participants that have no records yet.
    pub fn with_participants<I, S>(mut self, extra: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        for id in extra {
            let id = id.into();
            if !self.participants.contains(&id) {
                self.participants.push(id);
            }
        }
        self
    }

    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn question_index(&self) -> HashMap<&str, usize> {
        self.questions.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect()
    }

    pub fn participant_index(&self) -> HashMap<&str, usize> {
        self.participants.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect()
    }

    /// Restriction to the given participants (records and roster), keeping all questions.
    pub fn restrict_participants(&self, keep: &[String]) -> ResponseDataset {
        let keep_set: HashSet<&str> = keep.iter().map(String::as_str).collect();
        ResponseDataset {
            questions: self.questions.clone(),
            participants: self.participants.iter().filter(|p| keep_set.contains(p.as_str())).cloned().collect(),
            records: self
                .records
                .iter()
                .filter(|r| keep_set.contains(r.participant.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// Known correct options, keyed by question id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldSet {
    pub entries: BTreeMap<String, usize>,
}

impl GoldSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, question: impl Into<String>, option: usize) {
        self.entries.insert(question.into(), option);
    }

    pub fn get(&self, question: &str) -> Option<usize> {
        self.entries.get(question).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Subset of entries whose question id satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> GoldSet {
        GoldSet {
            entries: self.entries.iter().filter(|(q, _)| keep(q)).map(|(q, o)| (q.clone(), *o)).collect(),
        }
    }
}

impl FromIterator<(String, usize)> for GoldSet {
    fn from_iter<T: IntoIterator<Item = (String, usize)>>(iter: T) -> Self {
        GoldSet { entries: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiscriminationMode {
    /// Per-question precision with a Gamma prior.
    Learned,
    /// Every question shares the given precision.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub ability: Gaussian1D,
    pub difficulty: Gaussian1D,
    pub precision: GammaDist,
    pub discrimination: DiscriminationMode,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            ability: Gaussian1D { mean: 0.0, variance: 1.0 },
            difficulty: Gaussian1D { mean: 0.0, variance: 1.0 },
            precision: GammaDist { shape: 2.0, scale: 0.5 },
            discrimination: DiscriminationMode::Learned,
        }
    }
}

impl PriorSpec {
    pub fn with_discrimination(mut self, mode: DiscriminationMode) -> Self {
        self.discrimination = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        Gaussian1D::new(self.ability.mean, self.ability.variance)?;
        Gaussian1D::new(self.difficulty.mean, self.difficulty.variance)?;
        GammaDist::new(self.precision.shape, self.precision.scale)?;
        if let DiscriminationMode::Fixed(tau) = self.discrimination {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(DareError::InvalidParameter(format!("fixed precision must be positive, got {tau}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Abilities, difficulties and discriminations are all latent.
    #[default]
    Full,
    /// Every ability is clamped at the ability-prior mean.
    QuestionOnly,
    /// Every difficulty is clamped at the difficulty-prior mean.
    ParticipantOnly,
}

/// Prior over a question's precision as seen by the engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PrecisionPrior {
    Learned(GammaDist),
    Fixed(f64),
}

impl PrecisionPrior {
    /// Posterior family value reported for an untouched variable.
    pub fn as_gamma(&self) -> GammaDist {
        match *self {
            PrecisionPrior::Learned(g) => g,
            PrecisionPrior::Fixed(tau) => GammaDist::point_mass(tau),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PrecisionPrior::Learned(g) => g.mean(),
            PrecisionPrior::Fixed(tau) => tau,
        }
    }
}

/// One observed response, by dense index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub question: usize,
    pub participant: usize,
    pub response: usize,
}

/// Immutable factor-graph description. Cells are stored in
/// question-major, participant-minor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DareGraph {
    pub participant_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub num_options: Vec<usize>,
    pub ability_priors: Vec<Gaussian1D>,
    pub difficulty_priors: Vec<Gaussian1D>,
    pub precision_priors: Vec<PrecisionPrior>,
    pub answer_priors: Vec<Discrete>,
    pub cells: Vec<Cell>,
}

impl DareGraph {
    pub fn num_participants(&self) -> usize {
        self.participant_ids.len()
    }

    pub fn num_questions(&self) -> usize {
        self.question_ids.len()
    }

    /// Abilities plus difficulty, precision and answer per question.
    pub fn num_latent_variables(&self) -> usize {
        self.num_participants() + 3 * self.num_questions()
    }

    pub fn num_cell_factors(&self) -> usize {
        self.cells.len()
    }

    pub fn participant_position(&self, id: &str) -> Option<usize> {
        self.participant_ids.iter().position(|p| p == id)
    }

    pub fn question_position(&self, id: &str) -> Option<usize> {
        self.question_ids.iter().position(|q| q == id)
    }

    /// Appends a cell, keeping the canonical order. Used for what-if branches.
    pub fn with_cell(&self, cell: Cell) -> DareGraph {
        let mut next = self.clone();
        let at = next.cells.partition_point(|c| c < &cell);
        next.cells.insert(at, cell);
        next
    }

    /// Posteriors equal to the priors, as returned for a graph without evidence.
    pub fn prior_posteriors(&self) -> Posteriors {
        Posteriors {
            participant_ids: self.participant_ids.clone(),
            question_ids: self.question_ids.clone(),
            answer: self.answer_priors.clone(),
            ability: self.ability_priors.clone(),
            difficulty: self.difficulty_priors.clone(),
            precision: self.precision_priors.iter().map(PrecisionPrior::as_gamma).collect(),
            cells: Vec::new(),
        }
    }
}

/// Inferred distribution of one participant-question cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPosterior {
    /// Probability that the participant knew the answer.
    pub p_correct: f64,
    pub response_dist: Discrete,
    /// Moments of `ability - difficulty`.
    pub t: Gaussian1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub participant: usize,
    pub question: usize,
    pub posterior: CellPosterior,
}

/// All inferred marginal families, indexed like the graph they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors {
    pub participant_ids: Vec<String>,
    pub question_ids: Vec<String>,
    pub answer: Vec<Discrete>,
    pub ability: Vec<Gaussian1D>,
    pub difficulty: Vec<Gaussian1D>,
    pub precision: Vec<GammaDist>,
    pub cells: Vec<CellEntry>,
}

impl Posteriors {
    pub fn answer_of(&self, question: &str) -> Option<&Discrete> {
        self.question_ids.iter().position(|q| q == question).map(|i| &self.answer[i])
    }

    pub fn ability_of(&self, participant: &str) -> Option<Gaussian1D> {
        self.participant_ids.iter().position(|p| p == participant).map(|i| self.ability[i])
    }

    pub fn difficulty_of(&self, question: &str) -> Option<Gaussian1D> {
        self.question_ids.iter().position(|q| q == question).map(|i| self.difficulty[i])
    }

    pub fn precision_of(&self, question: &str) -> Option<GammaDist> {
        self.question_ids.iter().position(|q| q == question).map(|i| self.precision[i])
    }

    pub fn cell(&self, participant: usize, question: usize) -> Option<&CellPosterior> {
        self.cells
            .iter()
            .find(|c| c.participant == participant && c.question == question)
            .map(|c| &c.posterior)
    }

    /// Mode of each answer distribution (lowest index on ties).
    pub fn inferred_answers(&self) -> Vec<usize> {
        self.answer.iter().map(Discrete::mode).collect()
    }
}

/// A broken dataset rule, naming the offending item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

/// Checks every dataset and gold-set invariant; an empty list means valid.
pub fn validate(data: &ResponseDataset, gold: &GoldSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |subject: String, rule: String| out.push(Violation { subject, rule });

    let mut question_ids = HashMap::new();
    for (i, q) in data.questions.iter().enumerate() {
        let subject = format!("question `{}`", q.id);
        if question_ids.insert(q.id.as_str(), i).is_some() {
            push(subject.clone(), "duplicate question id".into());
        }
        if q.num_options < 2 {
            push(subject.clone(), format!("num_options must be at least 2, got {}", q.num_options));
        }
        if let Some(texts) = &q.option_texts {
            if texts.len() != q.num_options {
                push(subject, format!("{} option texts for {} options", texts.len(), q.num_options));
            }
        }
    }

    let roster: HashSet<&str> = data.participants.iter().map(String::as_str).collect();
    if roster.len() != data.participants.len() {
        push("participants".into(), "duplicate participant id".into());
    }

    let mut pairs = HashSet::new();
    for (line, r) in data.records.iter().enumerate() {
        let subject = format!("record {} ({}, {})", line, r.participant, r.question);
        match question_ids.get(r.question.as_str()) {
            None => push(subject.clone(), format!("unknown question `{}`", r.question)),
            Some(&qi) => {
                let k = data.questions[qi].num_options;
                if r.response >= k {
                    push(subject.clone(), format!("response {} out of range 0..{}", r.response, k));
                }
            }
        }
        if !roster.contains(r.participant.as_str()) {
            push(subject.clone(), format!("participant `{}` not in roster", r.participant));
        }
        if !pairs.insert((r.participant.as_str(), r.question.as_str())) {
            push(subject, format!("duplicate response for pair ({}, {})", r.participant, r.question));
        }
    }

    for (q, &option) in &gold.entries {
        let subject = format!("gold `{q}`");
        match question_ids.get(q.as_str()) {
            None => push(subject, format!("unknown question `{q}`")),
            Some(&qi) => {
                let k = data.questions[qi].num_options;
                if option >= k {
                    push(subject, format!("gold option {option} out of range 0..{k}"));
                }
            }
        }
    }
    out
}

/// Builds the factor graph: one ability per participant; one difficulty,
/// precision and answer per question; one gated factor per observed cell.
pub fn build_graph(
    data: &ResponseDataset,
    gold: &GoldSet,
    priors: &PriorSpec,
    variant: ModelVariant,
) -> Result<DareGraph> {
    priors.validate()?;
    let q_index = data.question_index();
    for r in &data.records {
        let Some(&qi) = q_index.get(r.question.as_str()) else {
            return Err(DareError::UnknownQuestion(r.question.clone()));
        };
        let k = data.questions[qi].num_options;
        if r.response >= k {
            return Err(DareError::OptionOutOfRange { question: r.question.clone(), option: r.response, num_options: k });
        }
    }
    for (q, &option) in &gold.entries {
        let Some(&qi) = q_index.get(q.as_str()) else {
            return Err(DareError::UnknownQuestion(q.clone()));
        };
        let k = data.questions[qi].num_options;
        if option >= k {
            return Err(DareError::OptionOutOfRange { question: q.clone(), option, num_options: k });
        }
    }
    let violations = validate(data, gold);
    if let Some(v) = violations.first() {
        return Err(DareError::InvalidDataset(v.to_string()));
    }

    let p_index = data.participant_index();
    let mut cells: Vec<Cell> = data
        .records
        .iter()
        .map(|r| Cell { question: q_index[r.question.as_str()], participant: p_index[r.participant.as_str()], response: r.response })
        .collect();
    cells.sort();

    let ability = match variant {
        ModelVariant::QuestionOnly => Gaussian1D::point_mass(priors.ability.mean),
        _ => priors.ability,
    };
    let difficulty = match variant {
        ModelVariant::ParticipantOnly => Gaussian1D::point_mass(priors.difficulty.mean),
        _ => priors.difficulty,
    };
    let precision = match priors.discrimination {
        DiscriminationMode::Learned => PrecisionPrior::Learned(priors.precision),
        DiscriminationMode::Fixed(tau) => PrecisionPrior::Fixed(tau),
    };

    Ok(DareGraph {
        participant_ids: data.participants.clone(),
        question_ids: data.questions.iter().map(|q| q.id.clone()).collect(),
        num_options: data.questions.iter().map(|q| q.num_options).collect(),
        ability_priors: vec![ability; data.participants.len()],
        difficulty_priors: vec![difficulty; data.questions.len()],
        precision_priors: vec![precision; data.questions.len()],
        answer_priors: data
            .questions
            .iter()
            .map(|q| match gold.get(&q.id) {
                Some(option) => Discrete::point_mass(q.num_options, option),
                None => Discrete::uniform(q.num_options),
            })
            .collect(),
        cells,
    })
}

//! Sampling datasets from the generative model with known ground truth.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, kind,
//! participant, question)`, so a cell's sample does not depend on the order in
//! which cells are generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DareError, Result};
use crate::model::{DiscriminationMode, GoldSet, PriorSpec, QuestionSpec, ResponseDataset, ResponseRecord};
use crate::prob::std_normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_participants: usize,
    pub num_questions: usize,
    pub num_options: usize,
    pub priors: PriorSpec,
    pub seed: u64,
    /// Fraction of cells observed, in `(0, 1]`.
    pub response_density: f64,
}

impl SynthConfig {
    /// 120 participants x 60 questions x 8 options, fully observed.
    pub fn population(seed: u64) -> Self {
        Self {
            num_participants: 120,
            num_questions: 60,
            num_options: 8,
            priors: PriorSpec::default(),
            seed,
            response_density: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_participants == 0 || self.num_questions == 0 {
            return Err(DareError::InvalidParameter("participant and question counts must be positive".into()));
        }
        if self.num_options < 2 {
            return Err(DareError::InvalidParameter("num_options must be at least 2".into()));
        }
        if !(self.response_density > 0.0 && self.response_density <= 1.0) {
            return Err(DareError::InvalidParameter(format!(
                "response_density must be in (0,1], got {}",
                self.response_density
            )));
        }
        self.priors.validate()
    }
}

/// A sampled dataset together with every latent value that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub data: ResponseDataset,
    /// Total gold set.
    pub gold: GoldSet,
    pub abilities: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub precisions: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Stream {
    Participant = 1,
    Question = 2,
    Cell = 3,
    Density = 4,
}

/// Independent generator for one `(kind, participant, question)` key.
fn keyed_rng(seed: u64, kind: Stream, participant: usize, question: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | ((participant as u64 & 0x0fff_ffff) << 28) | (question as u64 & 0x0fff_ffff));
    rng
}

/// Draws knowledge and response for one cell: the response copies `answer`
/// when the participant knows it and is uniform over all options otherwise.
pub fn sample_cell<R: Rng>(rng: &mut R, prob_know: f64, answer: usize, num_options: usize) -> (bool, usize) {
    let knows = rng.random::<f64>() < prob_know;
    let response = if knows { answer } else { rng.random_range(0..num_options) };
    (knows, response)
}

fn id_width(count: usize) -> usize {
    count.saturating_sub(1).to_string().len().max(2)
}

pub fn participant_id(index: usize, count: usize) -> String {
    format!("p{:0w$}", index, w = id_width(count))
}

pub fn question_id(index: usize, count: usize) -> String {
    format!("q{:0w$}", index, w = id_width(count))
}

pub fn sample(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let SynthConfig { num_participants: n_p, num_questions: n_q, num_options: k, priors, seed, response_density } = *config;
    let normal = |g: crate::prob::Gaussian1D| {
        Normal::new(g.mean, g.variance.sqrt()).map_err(|e| DareError::InvalidParameter(e.to_string()))
    };
    let ability_dist = normal(priors.ability)?;
    let difficulty_dist = normal(priors.difficulty)?;
    let precision_dist = Gamma::new(priors.precision.shape, priors.precision.scale)
        .map_err(|e| DareError::InvalidParameter(e.to_string()))?;

    let abilities: Vec<f64> =
        (0..n_p).map(|p| ability_dist.sample(&mut keyed_rng(seed, Stream::Participant, p, 0))).collect();
    let mut difficulties = Vec::with_capacity(n_q);
    let mut precisions = Vec::with_capacity(n_q);
    let mut answers = Vec::with_capacity(n_q);
    for q in 0..n_q {
        let mut rng = keyed_rng(seed, Stream::Question, 0, q);
        difficulties.push(difficulty_dist.sample(&mut rng));
        let tau = precision_dist.sample(&mut rng);
        precisions.push(match priors.discrimination {
            DiscriminationMode::Learned => tau,
            DiscriminationMode::Fixed(fixed) => fixed,
        });
        answers.push(rng.random_range(0..k));
    }

    let participants: Vec<String> = (0..n_p).map(|p| participant_id(p, n_p)).collect();
    let questions: Vec<QuestionSpec> = (0..n_q).map(|q| QuestionSpec::new(question_id(q, n_q), k)).collect();
    let mut records = Vec::new();
    for (p, pid) in participants.iter().enumerate() {
        for (q, spec) in questions.iter().enumerate() {
            if response_density < 1.0 {
                let mut mask = keyed_rng(seed, Stream::Density, p, q);
                if mask.random::<f64>() >= response_density {
                    continue;
                }
            }
            let prob_know = std_normal_cdf(precisions[q].sqrt() * (abilities[p] - difficulties[q]));
            let (_, response) = sample_cell(&mut keyed_rng(seed, Stream::Cell, p, q), prob_know, answers[q], k);
            records.push(ResponseRecord::new(pid.clone(), spec.id.clone(), response));
        }
    }
    let gold = questions.iter().zip(&answers).map(|(q, &a)| (q.id.clone(), a)).collect();
    let data = ResponseDataset { questions, participants, records };
    Ok(SyntheticData { data, gold, abilities, difficulties, precisions })
}

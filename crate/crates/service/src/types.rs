//! Request and response bodies of the HTTP API.

use std::collections::BTreeMap;

use dare_core::adaptive::{QuestionCalibration, SessionBank};
use dare_core::{EpConfig, Gaussian1D, GoldSet, QuestionSpec, Result};
use serde::{Deserialize, Serialize};

/// A question bank with gold answers and calibrated question parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankDefinition {
    pub questions: Vec<QuestionSpec>,
    /// Correct option index per question id.
    pub gold: BTreeMap<String, usize>,
    /// One entry per question, in question order.
    pub calibration: Vec<QuestionCalibration>,
}

impl BankDefinition {
    pub fn to_bank(&self) -> Result<SessionBank> {
        let gold: GoldSet = self.gold.iter().map(|(q, &o)| (q.clone(), o)).collect();
        SessionBank::new(self.questions.clone(), &gold, self.calibration.clone())
    }

    pub fn from_bank(bank: &SessionBank) -> Self {
        Self {
            questions: bank.questions.clone(),
            gold: bank.questions.iter().zip(&bank.gold).map(|(q, &g)| (q.id.clone(), g)).collect(),
            calibration: bank.calibration.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub id: String,
    pub num_questions: usize,
}

/// Either `bank_id` or an inline `bank`, not both.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub bank_id: Option<String>,
    pub bank: Option<BankDefinition>,
    pub participant_id: Option<String>,
    /// Defaults to the standard normal.
    pub ability_prior: Option<Gaussian1D>,
    /// Defaults to the bank size.
    pub budget: Option<usize>,
    pub ep: Option<EpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub participant_id: String,
    pub num_questions: usize,
    pub budget: usize,
    pub asked_count: usize,
    pub ability: Gaussian1D,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextQuestion {
    Offered {
        question: QuestionSpec,
        expected_entropy_reduction: f64,
        asked_count: usize,
        budget: usize,
    },
    Finished {
        asked_count: usize,
        budget: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub question_id: String,
    pub response: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub ability: Gaussian1D,
    pub asked_count: usize,
    pub budget: usize,
    pub estimated_raw_score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskedQuestion {
    pub question_id: String,
    pub response: usize,
    pub correct: bool,
}

/// Ability posterior after `step` answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub participant_id: String,
    pub budget: usize,
    pub asked: Vec<AskedQuestion>,
    pub trace: Vec<TracePoint>,
    pub estimated_raw_score: f64,
    pub finished: bool,
}

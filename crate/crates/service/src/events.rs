//! Append-only per-session event logs, one JSON object per line.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dare_core::adaptive::SessionBank;
use dare_core::{EpConfig, Gaussian1D, QuestionSpec};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    Created {
        participant_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bank_id: Option<String>,
        bank: SessionBank,
        ability_prior: Gaussian1D,
        budget: usize,
        ep: EpConfig,
    },
    QuestionOffered {
        question: QuestionSpec,
        expected_entropy_reduction: f64,
    },
    ResponseSubmitted {
        question_id: String,
        response: usize,
    },
    EstimateComputed {
        ability: Gaussian1D,
        estimated_raw_score: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub sequence: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

pub struct EventLog {
    path: PathBuf,
    file: File,
    next_sequence: u64,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self, ServiceError> {
        let file = OpenOptions::new().create_new(true).append(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file, next_sequence: 0 })
    }

    /// Reads every complete event, dropping a torn final line left by a crash mid-write.
    pub fn open(path: &Path) -> Result<(Self, Vec<SessionEvent>), ServiceError> {
        let text = fs::read_to_string(path)?;
        let mut events = Vec::new();
        let mut valid_len = 0;
        for line in text.split_inclusive('\n') {
            if !line.ends_with('\n') {
                log::warn!("{}: dropping incomplete final line", path.display());
                break;
            }
            let event: SessionEvent = serde_json::from_str(line.trim_end())
                .map_err(|e| ServiceError::Internal(format!("{}: corrupt event log: {e}", path.display())))?;
            if event.sequence != events.len() as u64 {
                return Err(ServiceError::Internal(format!(
                    "{}: expected sequence {}, found {}",
                    path.display(),
                    events.len(),
                    event.sequence
                )));
            }
            events.push(event);
            valid_len += line.len();
        }
        if valid_len < text.len() {
            OpenOptions::new().write(true).open(path)?.set_len(valid_len as u64)?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        let next_sequence = events.len() as u64;
        Ok((Self { path: path.to_path_buf(), file, next_sequence }, events))
    }

    /// Appends and syncs one event before returning it.
    pub fn append(&mut self, session_id: &str, kind: EventKind) -> Result<SessionEvent, ServiceError> {
        let event = SessionEvent { session_id: session_id.to_string(), sequence: self.next_sequence, timestamp: now_millis(), kind };
        let mut line = serde_json::to_string(&event).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.next_sequence += 1;
        Ok(event)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

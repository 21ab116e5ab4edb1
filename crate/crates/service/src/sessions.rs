//! Session registry, event application and recovery.
//!
//! Every state change goes through [`Snapshot::apply`], both live and during
//! replay, so a session rebuilt from its log matches the live one.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use dare_core::adaptive::{SessionBank, SessionState};
use dare_core::{DareError, Gaussian1D, QuestionSpec};

use crate::error::ServiceError;
use crate::events::{EventKind, EventLog, SessionEvent};
use crate::types::{
    AskedQuestion, BankDefinition, BankSummary, CreateSessionRequest, NextQuestion, SessionDescriptor, SessionReport,
    SubmitRequest, SubmitResult, TracePoint,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Offer {
    pub question: QuestionSpec,
    pub expected_entropy_reduction: f64,
}

/// In-memory session state derived from its events.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub session_id: String,
    pub state: SessionState,
    pub offer: Option<Offer>,
    /// Ability posterior before any answer and after each one.
    pub trace: Vec<Gaussian1D>,
}

impl Snapshot {
    fn from_created(session_id: &str, kind: &EventKind) -> Result<Self, ServiceError> {
        let EventKind::Created { participant_id, bank, ability_prior, budget, ep, .. } = kind else {
            return Err(ServiceError::Internal(format!("session {session_id} does not start with Created")));
        };
        let state = SessionState::new(participant_id.clone(), Arc::new(bank.clone()), *ability_prior, *budget, *ep)?;
        Ok(Self { session_id: session_id.to_string(), offer: None, trace: vec![state.ability], state })
    }

    fn apply(&mut self, kind: &EventKind) -> Result<(), ServiceError> {
        match kind {
            EventKind::Created { .. } => {
                return Err(ServiceError::Internal(format!("session {} created twice", self.session_id)));
            }
            EventKind::QuestionOffered { question, expected_entropy_reduction } => {
                self.offer = Some(Offer { question: question.clone(), expected_entropy_reduction: *expected_entropy_reduction });
            }
            EventKind::ResponseSubmitted { question_id, response } => {
                self.state = self.state.submit_response(question_id, *response)?;
                self.offer = None;
                self.trace.push(self.state.ability);
            }
            EventKind::EstimateComputed { ability, .. } => {
                if *ability != self.state.ability {
                    log::warn!("session {}: recorded estimate differs from replayed state", self.session_id);
                }
            }
        }
        Ok(())
    }

    /// Rebuilds a session from its events.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, ServiceError> {
        let first = events.first().ok_or_else(|| ServiceError::Internal("empty event log".into()))?;
        let mut snapshot = Self::from_created(&first.session_id, &first.kind)?;
        for event in &events[1..] {
            snapshot.apply(&event.kind)?;
        }
        Ok(snapshot)
    }

    fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            session_id: self.session_id.clone(),
            participant_id: self.state.participant_id.clone(),
            num_questions: self.state.bank.len(),
            budget: self.state.budget,
            asked_count: self.state.asked.len(),
            ability: self.state.ability,
            finished: self.state.is_finished(),
        }
    }

    fn report(&self) -> SessionReport {
        let bank = &self.state.bank;
        let asked = self
            .state
            .asked
            .iter()
            .map(|(q, r)| AskedQuestion {
                question_id: q.clone(),
                response: *r,
                correct: bank.position(q).is_some_and(|i| bank.gold[i] == *r),
            })
            .collect();
        SessionReport {
            session_id: self.session_id.clone(),
            participant_id: self.state.participant_id.clone(),
            budget: self.state.budget,
            asked,
            trace: self
                .trace
                .iter()
                .enumerate()
                .map(|(step, g)| TracePoint { step, mean: g.mean, variance: g.variance })
                .collect(),
            estimated_raw_score: self.state.estimate_raw_score(),
            finished: self.state.is_finished(),
        }
    }
}

struct LiveSession {
    snapshot: Snapshot,
    log: EventLog,
}

impl LiveSession {
    fn record(&mut self, kind: EventKind) -> Result<(), ServiceError> {
        self.log.append(&self.snapshot.session_id, kind.clone())?;
        self.snapshot.apply(&kind)
    }
}

pub struct SessionService {
    data_dir: PathBuf,
    banks: RwLock<BTreeMap<String, Arc<SessionBank>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionService {
    /// Opens `data_dir`, loading stored banks and replaying every session log.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(data_dir.join("banks"))?;
        fs::create_dir_all(data_dir.join("sessions"))?;
        let mut banks = BTreeMap::new();
        for path in files_with_extension(&data_dir.join("banks"), "json")? {
            let id = stem(&path);
            let def: BankDefinition = serde_json::from_str(&fs::read_to_string(&path)?)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            banks.insert(id, Arc::new(def.to_bank()?));
        }
        let mut sessions = HashMap::new();
        for path in files_with_extension(&data_dir.join("sessions"), "jsonl")? {
            let (log, events) = EventLog::open(&path)?;
            if events.is_empty() {
                log::warn!("{}: empty session log ignored", path.display());
                continue;
            }
            let snapshot = Snapshot::replay(&events)?;
            sessions.insert(snapshot.session_id.clone(), Arc::new(Mutex::new(LiveSession { snapshot, log })));
        }
        log::info!("opened {} with {} banks and {} sessions", data_dir.display(), banks.len(), sessions.len());
        Ok(Self { data_dir, banks: RwLock::new(banks), sessions: RwLock::new(sessions) })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Stores a bank; returns true when the id was new.
    pub fn put_bank(&self, id: &str, def: &BankDefinition) -> Result<bool, ServiceError> {
        if !valid_id(id) {
            return Err(ServiceError::Validation(format!("bank id `{id}` must be 1-128 letters, digits, `-` or `_`")));
        }
        let bank = def.to_bank()?;
        let text = serde_json::to_string_pretty(def).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let path = self.data_dir.join("banks").join(format!("{id}.json"));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(self.banks.write().expect("bank registry poisoned").insert(id.to_string(), Arc::new(bank)).is_none())
    }

    pub fn list_banks(&self) -> Vec<BankSummary> {
        self.banks
            .read()
            .expect("bank registry poisoned")
            .iter()
            .map(|(id, bank)| BankSummary { id: id.clone(), num_questions: bank.len() })
            .collect()
    }

    pub fn create_session(&self, request: CreateSessionRequest) -> Result<SessionDescriptor, ServiceError> {
        let bank = match (&request.bank_id, &request.bank) {
            (Some(id), None) => self
                .banks
                .read()
                .expect("bank registry poisoned")
                .get(id)
                .cloned()
                .ok_or_else(|| ServiceError::NotFound(format!("unknown bank `{id}`")))?,
            (None, Some(def)) => Arc::new(def.to_bank()?),
            _ => return Err(ServiceError::Validation("give exactly one of `bank_id` and `bank`".into())),
        };
        let budget = request.budget.unwrap_or(bank.len());
        let kind = EventKind::Created {
            participant_id: request.participant_id.unwrap_or_else(|| "anonymous".into()),
            bank_id: request.bank_id,
            bank: (*bank).clone(),
            ability_prior: request.ability_prior.unwrap_or_else(Gaussian1D::standard),
            budget,
            ep: request.ep.unwrap_or_default(),
        };
        let session_id = uuid::Uuid::new_v4().to_string();
        // Validate before anything touches the disk.
        let snapshot = Snapshot::from_created(&session_id, &kind)?;
        let mut log = EventLog::create(&self.data_dir.join("sessions").join(format!("{session_id}.jsonl")))?;
        log.append(&session_id, kind)?;
        let descriptor = snapshot.descriptor();
        self.sessions
            .write()
            .expect("session registry poisoned")
            .insert(session_id, Arc::new(Mutex::new(LiveSession { snapshot, log })));
        Ok(descriptor)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ServiceError> {
        self.sessions
            .read()
            .expect("session registry poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session `{id}`")))
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut LiveSession) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let session = self.session(id)?;
        let mut guard = session.lock().map_err(|_| ServiceError::Internal(format!("session {id} lock poisoned")))?;
        f(&mut guard)
    }

    /// The question on offer, choosing and recording one if none is pending.
    pub fn next(&self, id: &str) -> Result<NextQuestion, ServiceError> {
        self.with_session(id, |live| {
            let state = &live.snapshot.state;
            let (asked_count, budget) = (state.asked.len(), state.budget);
            if state.is_finished() {
                return Ok(NextQuestion::Finished { asked_count, budget });
            }
            if live.snapshot.offer.is_none() {
                let score = state.next_question()?;
                let question = state.bank.questions[state.bank.position(&score.question_id).expect("scored question is in the bank")].clone();
                live.record(EventKind::QuestionOffered { question, expected_entropy_reduction: score.expected_entropy_reduction })?;
            }
            let offer = live.snapshot.offer.clone().expect("offer recorded above");
            Ok(NextQuestion::Offered {
                question: offer.question,
                expected_entropy_reduction: offer.expected_entropy_reduction,
                asked_count,
                budget,
            })
        })
    }

    pub fn submit(&self, id: &str, request: SubmitRequest) -> Result<SubmitResult, ServiceError> {
        self.with_session(id, |live| {
            let state = &live.snapshot.state;
            if state.is_finished() {
                return Err(ServiceError::Conflict("session budget is exhausted".into()));
            }
            if state.is_asked(&request.question_id) {
                return Err(ServiceError::Conflict(format!("question `{}` was already answered", request.question_id)));
            }
            let offered = live.snapshot.offer.as_ref().map(|o| o.question.clone());
            let Some(question) = offered.filter(|q| q.id == request.question_id) else {
                return Err(ServiceError::Conflict(format!("question `{}` is not the one on offer", request.question_id)));
            };
            if request.response >= question.num_options {
                return Err(DareError::OptionOutOfRange {
                    question: question.id,
                    option: request.response,
                    num_options: question.num_options,
                }
                .into());
            }
            // Write-ahead: the response is durable before any inference runs.
            live.record(EventKind::ResponseSubmitted { question_id: request.question_id, response: request.response })?;
            let state = &live.snapshot.state;
            let result = SubmitResult {
                ability: state.ability,
                asked_count: state.asked.len(),
                budget: state.budget,
                estimated_raw_score: state.estimate_raw_score(),
                finished: state.is_finished(),
            };
            live.record(EventKind::EstimateComputed { ability: result.ability, estimated_raw_score: result.estimated_raw_score })?;
            Ok(result)
        })
    }

    pub fn report(&self, id: &str) -> Result<SessionReport, ServiceError> {
        self.with_session(id, |live| Ok(live.snapshot.report()))
    }

    pub fn descriptor(&self, id: &str) -> Result<SessionDescriptor, ServiceError> {
        self.with_session(id, |live| Ok(live.snapshot.descriptor()))
    }

    /// Current in-memory state of a session.
    pub fn snapshot(&self, id: &str) -> Result<Snapshot, ServiceError> {
        self.with_session(id, |live| Ok(live.snapshot.clone()))
    }

    /// Path of a session's event log.
    pub fn log_path(&self, id: &str) -> Result<PathBuf, ServiceError> {
        self.with_session(id, |live| Ok(live.log.path().to_path_buf()))
    }
}

/// Reads a session log from disk and replays it.
pub fn replay_log(path: &Path) -> Result<(Vec<SessionEvent>, Snapshot), ServiceError> {
    let (_, events) = EventLog::open(path)?;
    let snapshot = Snapshot::replay(&events)?;
    Ok((events, snapshot))
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ServiceError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    paths.sort();
    Ok(paths)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}


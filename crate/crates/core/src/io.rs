//! Line-oriented file formats: datasets as CSV, posteriors as JSON, and
//! experiment reports as CSV tables.
//!
//! Dataset files always start with a header row:
//!
//! - responses: `participant_id,question_id,response`
//! - questions: `question_id,num_options[,display_text,option_texts...]`
//! - gold: `question_id,correct_option`
//!
//! A response or gold value is first matched against the question's option
//! texts and otherwise read as a zero-based option index. Column numbers in
//! parse errors count fields from 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use serde::{Deserialize, Serialize};

use crate::ep::EpConfig;
use crate::error::{DareError, Result};
use crate::eval::MetricReport;
use crate::model::{validate, GoldSet, PriorSpec, QuestionSpec, ResponseDataset, ResponseRecord};
use crate::prob::{Discrete, GammaDist, Gaussian1D};
use crate::Posteriors;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FileManifest {
    pub responses: PathBuf,
    pub questions: PathBuf,
    pub gold: Option<PathBuf>,
    /// JSON [`RunConfig`].
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: ResponseDataset,
    pub gold: GoldSet,
}

/// Priors and engine settings read from a config file; missing fields take defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub priors: PriorSpec,
    pub ep: EpConfig,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = read_text(path)?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    config.priors.validate()?;
    config.ep.validate()?;
    Ok(config)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DareError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DareError::Io(format!("{}: {e}", path.display())))
}

fn json_error(path: &Path, e: serde_json::Error) -> DareError {
    DareError::Parse { line: e.line(), column: e.column(), message: format!("{}: {e}", path.display()) }
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl std::fmt::Display) -> DareError {
    DareError::Parse { line, column, message: format!("{}: {message}", path.display()) }
}

/// Data rows with their line numbers, after checking the header's leading columns.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, StringRecord)>> {
    let text = read_text(path)?;
    let mut reader = ReaderBuilder::new().has_headers(false).flexible(true).trim(Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, 1, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            for (i, want) in header.iter().enumerate() {
                let got = record.get(i).unwrap_or("");
                if !got.eq_ignore_ascii_case(want) {
                    return Err(parse_error(path, line, i + 1, format!("expected header column `{want}`, found `{got}`")));
                }
            }
            saw_header = true;
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() < header.len() {
            return Err(parse_error(path, line, record.len() + 1, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        rows.push((line, record));
    }
    if !saw_header {
        return Err(parse_error(path, 1, 1, format!("missing header `{}`", header.join(","))));
    }
    Ok(rows)
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionSpec>> {
    let mut questions: Vec<QuestionSpec> = Vec::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (line, row) in read_rows(path, &["question_id", "num_options"])? {
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, 1, "empty question id"));
        }
        if let Some(first) = lines.insert(id.clone(), line) {
            return Err(parse_error(path, line, 1, format!("question `{id}` already declared at line {first}")));
        }
        let num_options: usize = row[1]
            .parse()
            .map_err(|_| parse_error(path, line, 2, format!("num_options `{}` is not a count", &row[1])))?;
        if num_options < 2 {
            return Err(parse_error(path, line, 2, format!("question `{id}` needs at least 2 options")));
        }
        let text = row.get(2).filter(|t| !t.is_empty()).map(str::to_string);
        let option_texts: Vec<String> = row.iter().skip(3).map(str::to_string).collect();
        let option_texts = if option_texts.is_empty() {
            None
        } else if option_texts.len() != num_options {
            return Err(parse_error(path, line, 4, format!("{} option texts for {num_options} options", option_texts.len())));
        } else {
            Some(option_texts)
        };
        questions.push(QuestionSpec { id, num_options, text, option_texts });
    }
    Ok(questions)
}

fn resolve_option(path: &Path, line: usize, column: usize, question: &QuestionSpec, value: &str) -> Result<usize> {
    if let Some(i) = question.option_texts.as_ref().and_then(|t| t.iter().position(|o| o == value)) {
        return Ok(i);
    }
    match value.parse::<usize>() {
        Ok(i) if i < question.num_options => Ok(i),
        Ok(i) => Err(parse_error(
            path,
            line,
            column,
            format!("option {i} out of range for question `{}` with {} options", question.id, question.num_options),
        )),
        Err(_) => Err(parse_error(path, line, column, format!("`{value}` is not an option of question `{}`", question.id))),
    }
}

pub fn read_responses(path: &Path, questions: &[QuestionSpec]) -> Result<Vec<ResponseRecord>> {
    let by_id: HashMap<&str, &QuestionSpec> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut first_line: HashMap<(String, String), usize> = HashMap::new();
    let mut records = Vec::new();
    for (line, row) in read_rows(path, &["participant_id", "question_id", "response"])? {
        let (participant, question) = (row[0].to_string(), row[1].to_string());
        if participant.is_empty() {
            return Err(parse_error(path, line, 1, "empty participant id"));
        }
        let spec = by_id
            .get(question.as_str())
            .ok_or_else(|| parse_error(path, line, 2, format!("undeclared question `{question}`")))?;
        let response = resolve_option(path, line, 3, spec, &row[2])?;
        if let Some(first) = first_line.insert((participant.clone(), question.clone()), line) {
            return Err(parse_error(
                path,
                line,
                1,
                format!("duplicate response of `{participant}` to `{question}` (first at line {first})"),
            ));
        }
        records.push(ResponseRecord { participant, question, response });
    }
    Ok(records)
}

pub fn read_gold(path: &Path, questions: &[QuestionSpec]) -> Result<GoldSet> {
    let by_id: HashMap<&str, &QuestionSpec> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut gold = GoldSet::new();
    let mut lines: HashMap<String, usize> = HashMap::new();
    for (line, row) in read_rows(path, &["question_id", "correct_option"])? {
        let spec = by_id
            .get(&row[0])
            .ok_or_else(|| parse_error(path, line, 1, format!("undeclared question `{}`", &row[0])))?;
        if let Some(first) = lines.insert(spec.id.clone(), line) {
            return Err(parse_error(path, line, 1, format!("gold for `{}` already given at line {first}", spec.id)));
        }
        gold.insert(spec.id.clone(), resolve_option(path, line, 2, spec, &row[1])?);
    }
    Ok(gold)
}

fn check(data: &ResponseDataset, gold: &GoldSet) -> Result<()> {
    let violations = validate(data, gold);
    if violations.is_empty() {
        Ok(())
    } else {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        Err(DareError::InvalidDataset(text.join("; ")))
    }
}

/// Reads and validates the dataset named by `manifest`.
///
/// The participant roster is every participant id in order of first appearance.
pub fn load_dataset(manifest: &FileManifest) -> Result<LoadedDataset> {
    let questions = read_questions(&manifest.questions)?;
    let records = read_responses(&manifest.responses, &questions)?;
    let gold = match &manifest.gold {
        Some(path) => read_gold(path, &questions)?,
        None => GoldSet::new(),
    };
    let data = ResponseDataset::new(questions, records);
    check(&data, &gold)?;
    Ok(LoadedDataset { data, gold })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    WriterBuilder::new().flexible(true).from_writer(Vec::new())
}

fn finish(writer: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = writer.into_inner().map_err(|e| DareError::Io(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| DareError::Io(format!("{}: {e}", path.display())))
}

fn csv_io(e: csv::Error) -> DareError {
    DareError::Io(e.to_string())
}

fn option_value(question: &QuestionSpec, option: usize) -> String {
    match &question.option_texts {
        Some(texts) => texts[option].clone(),
        None => option.to_string(),
    }
}

/// Writes the dataset in the format [`load_dataset`] reads.
///
/// Participants without responses are not representable and are dropped.
pub fn save_dataset(data: &ResponseDataset, gold: &GoldSet, manifest: &FileManifest) -> Result<()> {
    let by_id: HashMap<&str, &QuestionSpec> = data.questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let lookup = |id: &str| by_id.get(id).copied().ok_or_else(|| DareError::UnknownQuestion(id.to_string()));

    let mut w = csv_writer();
    let described = data.questions.iter().any(|q| q.text.is_some() || q.option_texts.is_some());
    if described {
        w.write_record(["question_id", "num_options", "display_text", "option_texts"]).map_err(csv_io)?;
    } else {
        w.write_record(["question_id", "num_options"]).map_err(csv_io)?;
    }
    for q in &data.questions {
        let mut row = vec![q.id.clone(), q.num_options.to_string()];
        if described {
            row.push(q.text.clone().unwrap_or_default());
            row.extend(q.option_texts.iter().flatten().cloned());
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    finish(w, &manifest.questions)?;

    let mut w = csv_writer();
    w.write_record(["participant_id", "question_id", "response"]).map_err(csv_io)?;
    for r in &data.records {
        let value = option_value(lookup(&r.question)?, r.response);
        w.write_record([r.participant.as_str(), r.question.as_str(), value.as_str()]).map_err(csv_io)?;
    }
    finish(w, &manifest.responses)?;

    if let Some(path) = &manifest.gold {
        let mut w = csv_writer();
        w.write_record(["question_id", "correct_option"]).map_err(csv_io)?;
        for (q, &option) in &gold.entries {
            w.write_record([q.as_str(), option_value(lookup(q)?, option).as_str()]).map_err(csv_io)?;
        }
        finish(w, path)?;
    }
    Ok(())
}

/// Selection applied by [`load_trec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrecSelection {
    /// Keep this many questions with the most judgments.
    pub top_questions: Option<usize>,
    /// Then keep this many workers with the most judgments on those questions.
    pub top_workers: Option<usize>,
}

/// Loads relevance judgments given as `worker_id,question_id,label` triples
/// with a `question_id,label` gold file.
///
/// Options are the distinct labels in sorted order, shared by every question.
/// Questions without a gold label are dropped. Ties in the top-N selections
/// go to the smaller id.
pub fn load_trec(judgments: &Path, gold_path: &Path, selection: TrecSelection) -> Result<LoadedDataset> {
    let rows = read_rows(judgments, &["worker_id", "question_id", "label"])?;
    let gold_rows = read_rows(gold_path, &["question_id", "label"])?;
    let mut gold_labels: BTreeMap<String, String> = BTreeMap::new();
    for (line, row) in &gold_rows {
        if gold_labels.insert(row[0].to_string(), row[1].to_string()).is_some() {
            return Err(parse_error(gold_path, *line, 1, format!("gold for `{}` given twice", &row[0])));
        }
    }
    let labels: Vec<String> = rows
        .iter()
        .map(|(_, r)| r[2].to_string())
        .chain(gold_labels.values().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(DareError::InvalidDataset(format!("judgments use {} distinct label(s); need at least 2", labels.len())));
    }

    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut triples = Vec::new();
    for (line, row) in rows {
        let key = (row[0].to_string(), row[1].to_string());
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(parse_error(judgments, line, 1, format!("duplicate judgment of `{}` by `{}` (first at line {first})", key.1, key.0)));
        }
        if gold_labels.contains_key(&key.1) {
            triples.push((key.0, key.1, row[2].to_string()));
        }
    }

    let top = |counts: HashMap<&str, usize>, limit: Option<usize>| -> BTreeSet<String> {
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.into_iter().take(limit.unwrap_or(usize::MAX)).map(|(id, _)| id.to_string()).collect()
    };
    let mut question_counts: HashMap<&str, usize> = HashMap::new();
    for t in &triples {
        *question_counts.entry(t.1.as_str()).or_default() += 1;
    }
    let kept_questions = top(question_counts, selection.top_questions);
    let mut worker_counts: HashMap<&str, usize> = HashMap::new();
    for t in triples.iter().filter(|t| kept_questions.contains(&t.1)) {
        *worker_counts.entry(t.0.as_str()).or_default() += 1;
    }
    let kept_workers = top(worker_counts, selection.top_workers);

    let index = |label: &str| labels.iter().position(|l| l == label).expect("label collected above");
    let questions: Vec<QuestionSpec> = kept_questions
        .iter()
        .map(|id| QuestionSpec { option_texts: Some(labels.clone()), ..QuestionSpec::new(id.clone(), labels.len()) })
        .collect();
    let records = triples
        .iter()
        .filter(|t| kept_questions.contains(&t.1) && kept_workers.contains(&t.0))
        .map(|t| ResponseRecord::new(t.0.clone(), t.1.clone(), index(&t.2)))
        .collect();
    let gold = kept_questions.iter().map(|q| (q.clone(), index(&gold_labels[q]))).collect();
    let data = ResponseDataset::new(questions, records);
    check(&data, &gold)?;
    Ok(LoadedDataset { data, gold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPosterior {
    pub id: String,
    /// Option labels, when the dataset names its options.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: Vec<f64>,
    pub inferred_answer: usize,
    pub difficulty: Gaussian1D,
    pub precision: GammaDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPosterior {
    pub id: String,
    pub ability: Gaussian1D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPosteriorRecord {
    pub participant: String,
    pub question: String,
    pub p_correct: f64,
    pub response: Vec<f64>,
    pub ability_minus_difficulty: Gaussian1D,
}

/// On-disk form of [`Posteriors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDocument {
    pub questions: Vec<QuestionPosterior>,
    pub participants: Vec<ParticipantPosterior>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<CellPosteriorRecord>,
}

impl PosteriorDocument {
    /// `questions` supplies option labels; cell posteriors are kept only when `with_cells`.
    pub fn new(posteriors: &Posteriors, questions: &[QuestionSpec], with_cells: bool) -> Self {
        let labels: HashMap<&str, &Vec<String>> =
            questions.iter().filter_map(|q| q.option_texts.as_ref().map(|t| (q.id.as_str(), t))).collect();
        let inferred = posteriors.inferred_answers();
        let question_docs = posteriors
            .question_ids
            .iter()
            .enumerate()
            .map(|(i, id)| QuestionPosterior {
                id: id.clone(),
                options: labels.get(id.as_str()).map(|t| (*t).clone()),
                answer: posteriors.answer[i].probs.clone(),
                inferred_answer: inferred[i],
                difficulty: posteriors.difficulty[i],
                precision: posteriors.precision[i],
            })
            .collect();
        let participants = posteriors
            .participant_ids
            .iter()
            .zip(&posteriors.ability)
            .map(|(id, &ability)| ParticipantPosterior { id: id.clone(), ability })
            .collect();
        let cells = if with_cells {
            posteriors
                .cells
                .iter()
                .map(|c| CellPosteriorRecord {
                    participant: posteriors.participant_ids[c.participant].clone(),
                    question: posteriors.question_ids[c.question].clone(),
                    p_correct: c.posterior.p_correct,
                    response: c.posterior.response_dist.probs.clone(),
                    ability_minus_difficulty: c.posterior.t,
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { questions: question_docs, participants, cells }
    }

    fn check(&self) -> Result<()> {
        for q in &self.questions {
            let total: f64 = q.answer.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(DareError::InvalidParameter(format!("answer distribution of `{}` sums to {total}", q.id)));
            }
        }
        Ok(())
    }

    /// Rebuilds the marginal families; cells come back only if they were saved.
    pub fn to_posteriors(&self) -> Result<Posteriors> {
        let question_ids: Vec<String> = self.questions.iter().map(|q| q.id.clone()).collect();
        let participant_ids: Vec<String> = self.participants.iter().map(|p| p.id.clone()).collect();
        let q_index: HashMap<&str, usize> = question_ids.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
        let p_index: HashMap<&str, usize> = participant_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        let cells = self
            .cells
            .iter()
            .map(|c| {
                Ok(crate::model::CellEntry {
                    participant: *p_index.get(c.participant.as_str()).ok_or_else(|| DareError::UnknownParticipant(c.participant.clone()))?,
                    question: *q_index.get(c.question.as_str()).ok_or_else(|| DareError::UnknownQuestion(c.question.clone()))?,
                    posterior: crate::model::CellPosterior {
                        p_correct: c.p_correct,
                        response_dist: Discrete::new(c.response.clone())?,
                        t: c.ability_minus_difficulty,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Posteriors {
            answer: self.questions.iter().map(|q| Discrete::new(q.answer.clone())).collect::<Result<_>>()?,
            difficulty: self.questions.iter().map(|q| q.difficulty).collect(),
            precision: self.questions.iter().map(|q| q.precision).collect(),
            ability: self.participants.iter().map(|p| p.ability).collect(),
            question_ids,
            participant_ids,
            cells,
        })
    }
}

/// Writes pretty-printed JSON with fields in declaration order and floats in
/// their shortest round-tripping form.
pub fn save_posteriors(doc: &PosteriorDocument, path: &Path) -> Result<()> {
    doc.check()?;
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| DareError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn load_posteriors(path: &Path) -> Result<PosteriorDocument> {
    let doc: PosteriorDocument = serde_json::from_str(&read_text(path)?).map_err(|e| json_error(path, e))?;
    doc.check()?;
    Ok(doc)
}

/// Summary table: `series,setting,mean,std,min,max,count`.
pub fn summary_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["series", "setting", "mean", "std", "min", "max", "count"]).map_err(csv_io)?;
    for s in &report.summaries {
        w.serialize((&s.series, s.setting, s.mean, s.std, s.min, s.max, s.count)).map_err(csv_io)?;
    }
    into_string(w)
}

/// Plot-ready rows: `series,setting,replicate,value,paired`.
pub fn rows_csv(report: &MetricReport) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["series", "setting", "replicate", "value", "paired"]).map_err(csv_io)?;
    for r in &report.rows {
        let paired = r.paired.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([r.series.clone(), r.setting.to_string(), r.replicate.to_string(), r.value.to_string(), paired])
            .map_err(csv_io)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| DareError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| DareError::Io(e.to_string()))
}

pub fn write_report(report: &MetricReport, summary_path: &Path, rows_path: &Path) -> Result<()> {
    write_text(summary_path, &summary_csv(report)?)?;
    write_text(rows_path, &rows_csv(report)?)
}

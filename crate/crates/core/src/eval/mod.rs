//! Evaluation of model outputs against a dataset: answer extraction, per-item
//! scoring through the reward functions, and per-category reports.

mod extract;
mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedder;
use crate::external::ExternalExtractorClient;
use crate::record::{QuestionRecord, QuestionType};
use crate::reward::{mcq_accuracy_reward, qa_accuracy_reward, RewardError};

pub use extract::{extract_answer, extract_with, ExtractionMethod, ExtractionPatterns, ExtractionResult};
pub use report::{CategoryReport, CategoryRows, ReportFormat, ReportRow, Tally};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("outputs reference unknown question ids: {}", .0.join(", "))]
    UnknownQuestionIds(Vec<String>),
    #[error("more than one output for question {0}")]
    DuplicateOutput(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("extraction patterns: {0}")]
    Patterns(String),
    #[error("outputs line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("report: {0}")]
    Report(String),
}

/// One raw model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub question_id: String,
    pub raw_text: String,
}

/// Parses JSONL model outputs, skipping blank lines.
pub fn parse_outputs(text: &str) -> Result<Vec<ModelOutput>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

pub fn score_mcq(extracted: &str, record: &QuestionRecord) -> Result<f64, EvalError> {
    Ok(mcq_accuracy_reward(extracted, record)?)
}

pub fn score_qa<E: Embedder + ?Sized>(extracted: &str, record: &QuestionRecord, embedder: &E) -> Result<f64, EvalError> {
    Ok(qa_accuracy_reward(extracted, record, embedder)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub main_category: String,
    pub sub_category: String,
    pub qtype: QuestionType,
    pub extracted: String,
    pub method: ExtractionMethod,
    pub score: f64,
    /// No output was supplied; scored as a failed extraction.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: CategoryReport,
    /// In dataset order.
    pub scores: Vec<QuestionScore>,
}

impl Evaluation {
    pub fn method_counts(&self) -> BTreeMap<ExtractionMethod, usize> {
        let mut out = BTreeMap::new();
        for s in &self.scores {
            *out.entry(s.method).or_default() += 1;
        }
        out
    }

    pub fn missing(&self) -> usize {
        self.scores.iter().filter(|s| s.missing).count()
    }
}

/// Scores every dataset question. Questions without an output count as
/// failed extractions; outputs for ids outside the dataset are an error.
pub fn evaluate<E: Embedder + ?Sized>(
    outputs: &[ModelOutput],
    dataset: &[QuestionRecord],
    embedder: &E,
    client: Option<&dyn ExternalExtractorClient>,
) -> Result<Evaluation, EvalError> {
    let known: HashMap<&str, &QuestionRecord> = dataset.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut unknown: Vec<String> = Vec::new();
    let mut by_id: HashMap<&str, &ModelOutput> = HashMap::new();
    for o in outputs {
        if !known.contains_key(o.question_id.as_str()) {
            if !unknown.contains(&o.question_id) {
                unknown.push(o.question_id.clone());
            }
        } else if by_id.insert(&o.question_id, o).is_some() {
            return Err(EvalError::DuplicateOutput(o.question_id.clone()));
        }
    }
    if !unknown.is_empty() {
        return Err(EvalError::UnknownQuestionIds(unknown));
    }

    let mut scores = Vec::with_capacity(dataset.len());
    for r in dataset {
        let output = by_id.get(r.id.as_str());
        let extraction = match output {
            Some(o) => extract_answer(&o.raw_text, r.qtype, &r.question, client),
            None => ExtractionResult::failed(),
        };
        let score = match r.qtype {
            QuestionType::Mcq => score_mcq(&extraction.answer, r)?,
            QuestionType::Qa => score_qa(&extraction.answer, r, embedder)?,
        };
        scores.push(QuestionScore {
            question_id: r.id.clone(),
            main_category: r.main_category.clone(),
            sub_category: r.sub_category.clone(),
            qtype: r.qtype,
            extracted: extraction.answer,
            method: extraction.method,
            score,
            missing: output.is_none(),
        });
    }
    Ok(Evaluation { report: CategoryReport::from_scores(&scores), scores })
}

pub fn aggregate<E: Embedder + ?Sized>(
    outputs: &[ModelOutput],
    dataset: &[QuestionRecord],
    embedder: &E,
    client: Option<&dyn ExternalExtractorClient>,
) -> Result<CategoryReport, EvalError> {
    Ok(evaluate(outputs, dataset, embedder, client)?.report)
}

//! Question records shared by the generator, the reward engine and the
//! evaluation harness. One record is one line of a dataset JSONL file.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OPTION_KEYS: [&str; 4] = ["A", "B", "C", "D"];
pub const DEFAULT_MAX_FRAME_GAP: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "MCQ")]
    Mcq,
    #[serde(rename = "QA")]
    Qa,
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionType::Mcq => f.write_str("MCQ"),
            QuestionType::Qa => f.write_str("QA"),
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record {id}: MCQ must carry exactly options A, B, C, D")]
    BadOptionKeys { id: String },
    #[error("record {id}: MCQ answer {answer:?} matches {matches} options (expected exactly 1)")]
    AnswerNotAnOption { id: String, answer: String, matches: usize },
    #[error("record {id}: QA must not carry options")]
    QaWithOptions { id: String },
    #[error("record {id}: frame gap {gap} exceeds {max}")]
    FrameGap { id: String, gap: u32, max: u32 },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Where a generated answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    /// Derived from scene metadata (counts, room type) or fixed domain knowledge.
    Rule,
    /// Placeholder answer produced offline; not grounded in pixels.
    Synthetic,
    /// Returned by an external answer client.
    External,
}

/// One VQA item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub scene_id: String,
    pub frame_a_id: u32,
    pub frame_b_id: u32,
    pub main_category: String,
    pub sub_category: String,
    pub template_id: String,
    pub qtype: QuestionType,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<BTreeMap<String, String>>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_source: Option<AnswerSource>,
}

pub(crate) fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

impl QuestionRecord {
    /// Letter of the correct option, resolving `answer` either as a letter
    /// or as an option's text. `None` for QA records or unresolvable answers.
    pub fn correct_letter(&self) -> Option<&str> {
        let options = self.options.as_ref()?;
        let answer = normalize_answer(&self.answer);
        if let Some((k, _)) = options.iter().find(|(k, _)| normalize_answer(k) == answer) {
            return Some(k.as_str());
        }
        options
            .iter()
            .find(|(_, text)| normalize_answer(text) == answer)
            .map(|(k, _)| k.as_str())
    }

    pub fn option_text(&self, letter: &str) -> Option<&str> {
        let key = letter.trim().to_uppercase();
        self.options.as_ref()?.get(&key).map(String::as_str)
    }

    pub fn frame_gap(&self) -> u32 {
        self.frame_a_id.abs_diff(self.frame_b_id)
    }

    pub fn validate(&self, max_frame_gap: u32) -> Result<(), RecordError> {
        let id = || self.id.clone();
        match self.qtype {
            QuestionType::Mcq => {
                let options = self.options.as_ref().ok_or_else(|| RecordError::BadOptionKeys { id: id() })?;
                let keys: Vec<&str> = options.keys().map(String::as_str).collect();
                if keys != OPTION_KEYS {
                    return Err(RecordError::BadOptionKeys { id: id() });
                }
                let answer = normalize_answer(&self.answer);
                let by_text = options.values().filter(|t| normalize_answer(t) == answer).count();
                let by_letter = usize::from(keys.iter().any(|k| normalize_answer(k) == answer));
                let matches = if by_text > 0 { by_text } else { by_letter };
                if matches != 1 {
                    return Err(RecordError::AnswerNotAnOption {
                        id: id(),
                        answer: self.answer.clone(),
                        matches,
                    });
                }
            }
            QuestionType::Qa => {
                if self.options.is_some() {
                    return Err(RecordError::QaWithOptions { id: id() });
                }
            }
        }
        if self.frame_gap() > max_frame_gap {
            return Err(RecordError::FrameGap {
                id: id(),
                gap: self.frame_gap(),
                max: max_frame_gap,
            });
        }
        Ok(())
    }
}

/// Parses a JSONL dataset, skipping blank lines.
pub fn parse_jsonl(text: &str) -> Result<Vec<QuestionRecord>, RecordError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| RecordError::Parse { line: i + 1, source }))
        .collect()
}

pub fn to_jsonl(records: &[QuestionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        // QuestionRecord has only string keys and plain values.
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

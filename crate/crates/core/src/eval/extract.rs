//! Tiered answer extraction: `<answer>` tag, then versioned heuristic
//! patterns, then an optional external extractor.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::external::{ExternalExtractorClient, ExtractionRequest};
use crate::record::QuestionType;
use crate::reward::parse_structured;

const SHIPPED_PATTERNS: &str = include_str!("../../data/extraction_patterns.json");

static THINK_BLOCK: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<think>.*?(?:</think>|\z)").unwrap());

static DEFAULT_PATTERNS: Lazy<ExtractionPatterns> =
    Lazy::new(|| ExtractionPatterns::from_json(SHIPPED_PATTERNS).expect("shipped patterns compile"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExtractionMethod {
    Tag,
    Heuristic,
    External,
    Failed,
}

impl fmt::Display for ExtractionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionMethod::Tag => "TAG",
            ExtractionMethod::Heuristic => "HEURISTIC",
            ExtractionMethod::External => "EXTERNAL",
            ExtractionMethod::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// Empty when `method` is `Failed`.
    pub answer: String,
    pub method: ExtractionMethod,
}

impl ExtractionResult {
    fn found(answer: String, method: ExtractionMethod) -> Self {
        Self { answer, method }
    }

    pub fn failed() -> Self {
        Self { answer: String::new(), method: ExtractionMethod::Failed }
    }
}

#[derive(Deserialize)]
struct PatternFile {
    version: String,
    mcq: Vec<String>,
    qa_markers: Vec<String>,
}

/// Compiled heuristic patterns. MCQ patterns capture the option letter in
/// group 1 and are tried in order; within a pattern the last match wins.
/// QA markers split off the text after their last occurrence.
#[derive(Debug, Clone)]
pub struct ExtractionPatterns {
    pub version: String,
    mcq: Vec<Regex>,
    qa_markers: Vec<Regex>,
}

impl ExtractionPatterns {
    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        let file: PatternFile = serde_json::from_str(json).map_err(|e| EvalError::Patterns(e.to_string()))?;
        let compile = |list: Vec<String>| -> Result<Vec<Regex>, EvalError> {
            list.iter()
                .map(|p| Regex::new(p).map_err(|e| EvalError::Patterns(format!("{p}: {e}"))))
                .collect()
        };
        let mcq = compile(file.mcq)?;
        if let Some(bad) = mcq.iter().find(|r| r.captures_len() < 2) {
            return Err(EvalError::Patterns(format!("MCQ pattern {bad} has no capture group")));
        }
        Ok(Self { version: file.version, mcq, qa_markers: compile(file.qa_markers)? })
    }

    pub fn shipped() -> &'static Self {
        &DEFAULT_PATTERNS
    }

    fn mcq_letter(&self, text: &str) -> Option<String> {
        self.mcq.iter().find_map(|re| {
            re.captures_iter(text)
                .last()
                .and_then(|c| c.get(1))
                .map(|m| m.as_str().to_uppercase())
        })
    }

    fn qa_answer(&self, text: &str) -> Option<String> {
        let tail = self
            .qa_markers
            .iter()
            .find_map(|re| re.find_iter(text).last().map(|m| &text[m.end()..]))
            .unwrap_or(text)
            .trim();
        (!tail.is_empty()).then(|| tail.to_string())
    }

    /// Heuristic tier on text with reasoning blocks removed.
    pub fn heuristic(&self, raw: &str, qtype: QuestionType) -> Option<String> {
        let text = THINK_BLOCK.replace_all(raw, " ");
        match qtype {
            QuestionType::Mcq => self.mcq_letter(&text),
            QuestionType::Qa => self.qa_answer(&text),
        }
    }
}

/// Tag content, or `None` when the tag is absent or blank.
fn tag_answer(raw: &str) -> Option<String> {
    parse_structured(raw).answer_text.filter(|t| !t.is_empty())
}

/// Runs the tiers in order and stops at the first success. `question` is
/// only used to build the external request.
pub fn extract_with(
    patterns: &ExtractionPatterns,
    raw: &str,
    qtype: QuestionType,
    question: &str,
    client: Option<&dyn ExternalExtractorClient>,
) -> ExtractionResult {
    if let Some(a) = tag_answer(raw) {
        return ExtractionResult::found(a, ExtractionMethod::Tag);
    }
    if let Some(a) = patterns.heuristic(raw, qtype) {
        return ExtractionResult::found(a, ExtractionMethod::Heuristic);
    }
    if let Some(client) = client {
        if raw.trim().is_empty() {
            return ExtractionResult::failed();
        }
        if let Ok(a) = client.extract(&ExtractionRequest::new(qtype, question, raw)) {
            let a = a.trim();
            if !a.is_empty() {
                return ExtractionResult::found(a.to_string(), ExtractionMethod::External);
            }
        }
    }
    ExtractionResult::failed()
}

/// [`extract_with`] using the shipped heuristic patterns.
pub fn extract_answer(
    raw: &str,
    qtype: QuestionType,
    question: &str,
    client: Option<&dyn ExternalExtractorClient>,
) -> ExtractionResult {
    extract_with(ExtractionPatterns::shipped(), raw, qtype, question, client)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::external::ClientError;
    use std::cell::Cell;

    const CORPUS: &str = include_str!("../../tests/fixtures/mcq_phrasings.json");

    #[derive(Deserialize)]
    struct Phrasing {
        text: String,
        expected: String,
    }

    fn corpus() -> Vec<Phrasing> {
        serde_json::from_str(CORPUS).unwrap()
    }

    struct Counting {
        calls: Cell<usize>,
        reply: Result<String, ClientError>,
    }

    impl ExternalExtractorClient for Counting {
        fn extract(&self, req: &ExtractionRequest) -> Result<String, ClientError> {
            self.calls.set(self.calls.get() + 1);
            assert!(req.prompt.contains("Question Type:"));
            self.reply.clone()
        }
    }

    fn mcq(raw: &str) -> ExtractionResult {
        extract_answer(raw, QuestionType::Mcq, "q", None)
    }

    #[test]
    fn tag_tier() {
        assert_eq!(
            mcq("<think>A looks wrong</think><answer>B</answer>"),
            ExtractionResult { answer: "B".into(), method: ExtractionMethod::Tag }
        );
    }

    #[test]
    fn heuristic_corpus() {
        let c = corpus();
        assert_eq!(c.len(), 20);
        for p in c {
            let r = mcq(&p.text);
            assert_eq!(r.method, ExtractionMethod::Heuristic, "{:?}", p.text);
            assert_eq!(r.answer, p.expected, "{:?}", p.text);
        }
    }

    #[test]
    fn tag_beats_heuristic_on_corpus() {
        for p in corpus() {
            let other = if p.expected == "A" { "C" } else { "A" };
            let raw = format!("{} <answer>{other}</answer>", p.text);
            let client = Counting { calls: Cell::new(0), reply: Ok("D".into()) };
            let r = extract_answer(&raw, QuestionType::Mcq, "q", Some(&client));
            assert_eq!(r, ExtractionResult { answer: other.into(), method: ExtractionMethod::Tag });
            assert_eq!(client.calls.get(), 0);
        }
    }

    #[test]
    fn heuristic_ignores_reasoning_blocks() {
        let r = mcq("<think>the answer is A</think> so my pick is C");
        assert_eq!(r.answer, "C");
        // A reasoning block that never closes hides everything after it.
        assert_eq!(mcq("<think>answer is A").method, ExtractionMethod::Failed);
    }

    #[test]
    fn empty_fails() {
        assert_eq!(mcq(""), ExtractionResult::failed());
        assert_eq!(mcq("no letter here"), ExtractionResult::failed());
        let blank_tag = mcq("<answer>  </answer> answer is D");
        assert_eq!(blank_tag.method, ExtractionMethod::Heuristic);
    }

    #[test]
    fn qa_heuristic() {
        let qa = |raw| extract_answer(raw, QuestionType::Qa, "q", None);
        assert_eq!(qa("Reasoning here. Final answer: a pan to the left").answer, "a pan to the left");
        assert_eq!(qa("  The camera rotated.  ").answer, "The camera rotated.");
        assert_eq!(qa("<think>x</think>").method, ExtractionMethod::Failed);
    }

    #[test]
    fn external_tier() {
        let client = Counting { calls: Cell::new(0), reply: Ok(" B ".into()) };
        let r = extract_answer("<think>hmm</think>", QuestionType::Mcq, "q", Some(&client));
        assert_eq!(r, ExtractionResult { answer: "B".into(), method: ExtractionMethod::External });
        assert_eq!(client.calls.get(), 1);

        let down = Counting { calls: Cell::new(0), reply: Err(ClientError::fatal("down")) };
        assert_eq!(extract_answer("<think>hmm</think>", QuestionType::Mcq, "q", Some(&down)).method, ExtractionMethod::Failed);
        // Empty output never reaches the client.
        assert_eq!(extract_answer("", QuestionType::Mcq, "q", Some(&client)).method, ExtractionMethod::Failed);
        assert_eq!(client.calls.get(), 1);
    }

    #[test]
    fn pattern_file_validation() {
        assert!(ExtractionPatterns::from_json(r#"{"version":"x","mcq":["("],"qa_markers":[]}"#).is_err());
        assert!(ExtractionPatterns::from_json(r#"{"version":"x","mcq":["[A-D]"],"qa_markers":[]}"#).is_err());
        assert_eq!(ExtractionPatterns::shipped().version, "1");
    }
}

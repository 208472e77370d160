//! Rule-based rewards for `<think>…</think><answer>…</answer>` responses.
//!
//! Three components are scored independently and then combined:
//!
//! * format: 1 when both tag pairs are present, else 0;
//! * answer: exact match for MCQ, embedding cosine for QA;
//! * consistency: whether the reasoning supports the answer. For MCQ the chosen
//!   option must be mentioned in the reasoning; for QA it is the best cosine
//!   between the answer and any overlapping chunk of the reasoning.
//!
//! The composite is `format * sqrt(clip(answer) * clip(consistency))`, so a
//! malformed response earns nothing regardless of content.
//!
//! Every function here is total over arbitrary model text: a missing segment
//! scores 0 rather than raising.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedder, EmbeddingVector};
use crate::record::{normalize_answer, QuestionRecord, QuestionType, OPTION_KEYS};

static THINK_TAG: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<think>(.*?)</think>").unwrap());
static ANSWER_TAG: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("question-type mismatch: expected {expected}, got {found}")]
    QuestionTypeMismatch {
        expected: QuestionType,
        found: QuestionType,
    },
    #[error("invalid chunk config: {0}")]
    InvalidChunkConfig(String),
}

/// A model response split into its reasoning and answer segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub raw: String,
    pub think_text: Option<String>,
    pub answer_text: Option<String>,
    pub has_think_tag: bool,
    pub has_answer_tag: bool,
}

/// Finds the first closed `<think>` and `<answer>` pairs. Tag names match
/// case-insensitively; an opening tag without its closer counts as absent.
pub fn parse_structured(raw: &str) -> StructuredResponse {
    let inner = |re: &Regex| re.captures(raw).map(|c| c[1].trim().to_string());
    let think_text = inner(&THINK_TAG);
    let answer_text = inner(&ANSWER_TAG);
    StructuredResponse {
        raw: raw.to_string(),
        has_think_tag: think_text.is_some(),
        has_answer_tag: answer_text.is_some(),
        think_text,
        answer_text,
    }
}

pub fn format_reward(resp: &StructuredResponse) -> f64 {
    if resp.has_think_tag && resp.has_answer_tag {
        1.0
    } else {
        0.0
    }
}

fn expect_type(record: &QuestionRecord, expected: QuestionType) -> Result<(), RewardError> {
    if record.qtype == expected {
        Ok(())
    } else {
        Err(RewardError::QuestionTypeMismatch {
            expected,
            found: record.qtype,
        })
    }
}

/// 1 when the prediction names the correct option, by letter or by full text,
/// after trimming and case-folding.
pub fn mcq_accuracy_reward(predicted: &str, record: &QuestionRecord) -> Result<f64, RewardError> {
    expect_type(record, QuestionType::Mcq)?;
    let predicted = normalize_answer(predicted);
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let hit = match record.correct_letter() {
        Some(letter) => {
            predicted == normalize_answer(letter)
                || record
                    .option_text(letter)
                    .is_some_and(|text| predicted == normalize_answer(text))
        }
        None => predicted == normalize_answer(&record.answer),
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Cosine similarity between prediction and ground truth, clamped to `[0, 1]`.
pub fn qa_accuracy_reward<E: Embedder + ?Sized>(
    predicted: &str,
    record: &QuestionRecord,
    embedder: &E,
) -> Result<f64, RewardError> {
    expect_type(record, QuestionType::Qa)?;
    Ok(similarity(embedder, &embedder.embed(predicted), &record.answer))
}

fn similarity<E: Embedder + ?Sized>(
    embedder: &E,
    lhs: &EmbeddingVector,
    rhs: &str,
) -> f64 {
    cosine_similarity(lhs, &embedder.embed(rhs))
        .map(|c| c.clamp(0.0, 1.0))
        .unwrap_or(0.0)
}

/// True when `letter` occurs as a whole alphanumeric token of `text`.
pub fn contains_token(text: &str, letter: &str) -> bool {
    let letter = letter.trim().to_lowercase();
    !letter.is_empty()
        && text
            .split(|c: char| !c.is_alphanumeric())
            .any(|tok| tok.to_lowercase() == letter)
}

/// 1 when the reasoning mentions the chosen option, either as a standalone
/// letter token or by the option's full text.
pub fn consistency_reward_mcq(
    resp: &StructuredResponse,
    predicted_letter: &str,
    option_text: Option<&str>,
) -> f64 {
    let Some(think) = resp.think_text.as_deref() else {
        return 0.0;
    };
    let letter = predicted_letter.trim();
    let letter_hit = OPTION_KEYS.iter().any(|k| k.eq_ignore_ascii_case(letter)) && contains_token(think, letter);
    let text_hit = option_text
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .is_some_and(|t| think.to_lowercase().contains(&t.to_lowercase()));
    if letter_hit || text_hit {
        1.0
    } else {
        0.0
    }
}

/// Word-window geometry for splitting long reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkConfig {
    pub chunk_len_words: usize,
    pub stride_words: usize,
    pub long_threshold_words: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_len_words: 64,
            stride_words: 32,
            long_threshold_words: 64,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.chunk_len_words == 0 || self.stride_words == 0 || self.long_threshold_words == 0 {
            return Err(RewardError::InvalidChunkConfig("all sizes must be positive".into()));
        }
        if self.stride_words > self.chunk_len_words {
            return Err(RewardError::InvalidChunkConfig(format!(
                "stride {} exceeds chunk length {}",
                self.stride_words, self.chunk_len_words
            )));
        }
        Ok(())
    }
}

/// Splits `text` into overlapping word windows followed by the full text.
/// Texts at or below the long threshold come back as a single chunk.
pub fn chunk_text(text: &str, cfg: &ChunkConfig) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= cfg.long_threshold_words {
        return vec![text.to_string()];
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + cfg.chunk_len_words).min(words.len());
        chunks.push(words[start..end].join(" "));
        if end == words.len() {
            break;
        }
        start += cfg.stride_words;
    }
    chunks.push(text.to_string());
    chunks
}

/// Best similarity between the answer and any chunk of the reasoning.
pub fn consistency_reward_qa<E: Embedder + ?Sized>(
    resp: &StructuredResponse,
    embedder: &E,
    cfg: &ChunkConfig,
) -> f64 {
    let (Some(think), Some(answer)) = (resp.think_text.as_deref(), resp.answer_text.as_deref())
    else {
        return 0.0;
    };
    let answer_vec = embedder.embed(answer);
    chunk_text(think, cfg)
        .iter()
        .map(|c| similarity(embedder, &answer_vec, c))
        .fold(0.0, f64::max)
}

pub fn composite_reward(format: f64, answer: f64, consistency: f64) -> f64 {
    format * (answer.clamp(0.0, 1.0) * consistency.clamp(0.0, 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub answer: f64,
    pub consistency: f64,
    pub composite: f64,
}

/// Resolves an MCQ prediction to an option letter, by letter or by text.
pub fn resolve_option_letter<'a>(predicted: &str, record: &'a QuestionRecord) -> Option<&'a str> {
    let options = record.options.as_ref()?;
    let p = normalize_answer(predicted);
    options
        .iter()
        .find(|(k, _)| normalize_answer(k) == p)
        .or_else(|| options.iter().find(|(_, t)| normalize_answer(t) == p))
        .map(|(k, _)| k.as_str())
}

/// Full breakdown for one raw response. Components are computed even when
/// the format gate is closed; only the composite is forced to 0 then.
pub fn score_response<E: Embedder + ?Sized>(
    record: &QuestionRecord,
    raw: &str,
    embedder: &E,
    cfg: &ChunkConfig,
) -> RewardBreakdown {
    let resp = parse_structured(raw);
    let format = format_reward(&resp);
    let (answer, consistency) = match (record.qtype, resp.answer_text.as_deref()) {
        (_, None) => (0.0, 0.0),
        (QuestionType::Mcq, Some(pred)) => {
            let answer = mcq_accuracy_reward(pred, record).unwrap_or(0.0);
            let consistency = resolve_option_letter(pred, record)
                .map(|letter| consistency_reward_mcq(&resp, letter, record.option_text(letter)))
                .unwrap_or(0.0);
            (answer, consistency)
        }
        (QuestionType::Qa, Some(pred)) => {
            let answer = qa_accuracy_reward(pred, record, embedder).unwrap_or(0.0);
            (answer, consistency_reward_qa(&resp, embedder, cfg))
        }
    };
    RewardBreakdown {
        format,
        answer,
        consistency,
        composite: composite_reward(format, answer, consistency),
    }
}

/// Scores raw responses against question records.
pub trait RewardScorer: Send + Sync {
    fn score(&self, record: &QuestionRecord, raw: &str) -> RewardBreakdown;
}

/// The composite reward with a fixed embedder and chunk geometry.
pub struct RewardEngine<E> {
    embedder: E,
    chunks: ChunkConfig,
}

impl<E: Embedder> RewardEngine<E> {
    pub fn new(embedder: E, chunks: ChunkConfig) -> Result<Self, RewardError> {
        chunks.validate()?;
        Ok(Self { embedder, chunks })
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }

    pub fn chunk_config(&self) -> &ChunkConfig {
        &self.chunks
    }
}

impl<E: Embedder> RewardScorer for RewardEngine<E> {
    fn score(&self, record: &QuestionRecord, raw: &str) -> RewardBreakdown {
        score_response(record, raw, &self.embedder, &self.chunks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedNgramEmbedder;
    use crate::record::fixtures::{mcq, qa};
    use proptest::prelude::*;

    #[test]
    fn parse_examples() {
        let r = parse_structured("<think>sofa left</think><answer>A</answer>");
        assert_eq!(r.think_text.as_deref(), Some("sofa left"));
        assert_eq!(r.answer_text.as_deref(), Some("A"));
        assert!(r.has_think_tag && r.has_answer_tag);

        let r = parse_structured("no tags here");
        assert!(!r.has_think_tag && !r.has_answer_tag);
        assert!(r.think_text.is_none() && r.answer_text.is_none());

        let r = parse_structured("<answer>B</answer>");
        assert!(!r.has_think_tag && r.has_answer_tag);
        assert_eq!(r.answer_text.as_deref(), Some("B"));
    }

    #[test]
    fn parse_malformed() {
        let r = parse_structured("<THINK>\n  upper  \n</Think><answer>open only");
        assert_eq!(r.think_text.as_deref(), Some("upper"));
        assert!(!r.has_answer_tag);
        let r = parse_structured("<answer>one</answer><answer>two</answer>");
        assert_eq!(r.answer_text.as_deref(), Some("one"));
        let r = parse_structured("</think>x<think>");
        assert!(!r.has_think_tag);
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_reward(&parse_structured("<think>x</think><answer>y</answer>")), 1.0);
        assert_eq!(format_reward(&parse_structured("<answer>y</answer>")), 0.0);
        assert_eq!(format_reward(&parse_structured("")), 0.0);
    }

    #[test]
    fn mcq_accuracy_examples() {
        let rec = mcq("B");
        assert_eq!(mcq_accuracy_reward("B", &rec), Ok(1.0));
        assert_eq!(mcq_accuracy_reward("C", &rec), Ok(0.0));
        assert_eq!(mcq_accuracy_reward(" b ", &rec), Ok(1.0));
        assert_eq!(mcq_accuracy_reward("frame b", &rec), Ok(1.0));
        assert_eq!(mcq_accuracy_reward("", &rec), Ok(0.0));
        let rec = mcq("Frame B");
        assert_eq!(mcq_accuracy_reward("B", &rec), Ok(1.0));
        assert_eq!(mcq_accuracy_reward("Frame A", &rec), Ok(0.0));
    }

    #[test]
    fn type_mismatch_errors() {
        let e = HashedNgramEmbedder::default();
        let err = mcq_accuracy_reward("B", &qa("pan")).unwrap_err();
        assert!(err.to_string().starts_with("question-type mismatch"));
        assert!(qa_accuracy_reward("B", &mcq("B"), &e).is_err());
    }

    #[test]
    fn qa_accuracy_examples() {
        let e = HashedNgramEmbedder::default();
        let rec = qa("the camera pans to the right");
        assert!((qa_accuracy_reward("the camera pans to the right", &rec, &e).unwrap() - 1.0).abs() < 1e-9);
        // "xyz" shares no trigram or longer n-gram with the ground truth.
        assert_eq!(qa_accuracy_reward("xyz", &rec, &e).unwrap(), 0.0);
        assert_eq!(qa_accuracy_reward("", &rec, &e).unwrap(), 0.0);
    }

    #[test]
    fn mcq_consistency_examples() {
        let resp = |t: &str| parse_structured(&format!("<think>{t}</think><answer>B</answer>"));
        assert_eq!(consistency_reward_mcq(&resp("options compared; B is wider"), "B", None), 1.0);
        assert_eq!(consistency_reward_mcq(&resp("the sofa is larger"), "B", None), 0.0);
        assert_eq!(consistency_reward_mcq(&resp("subset"), "B", None), 0.0);
        assert_eq!(consistency_reward_mcq(&resp("pick (b)."), "B", None), 1.0);
        assert_eq!(
            consistency_reward_mcq(&resp("frame b looks down on it"), "B", Some("Frame B")),
            1.0
        );
        assert_eq!(consistency_reward_mcq(&parse_structured("<answer>B</answer>"), "B", None), 0.0);
        assert_eq!(consistency_reward_mcq(&resp("E is best"), "E", None), 0.0);
    }

    #[test]
    fn chunk_examples() {
        let cfg = ChunkConfig::default();
        let ten: String = (0..10).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert_eq!(chunk_text(&ten, &cfg), vec![ten.clone()]);
        assert_eq!(chunk_text("", &cfg), vec![String::new()]);

        let words: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let chunks = chunk_text(&text, &cfg);
        assert_eq!(chunks.len(), 4);
        assert_eq!(chunks[0], words[0..64].join(" "));
        assert_eq!(chunks[1], words[32..96].join(" "));
        assert_eq!(chunks[2], words[64..100].join(" "));
        assert_eq!(chunks[3], text);
    }

    #[test]
    fn chunk_config_validation() {
        assert!(ChunkConfig::default().validate().is_ok());
        let bad = ChunkConfig { stride_words: 65, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ChunkConfig { chunk_len_words: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn qa_consistency_examples() {
        let e = HashedNgramEmbedder::default();
        let cfg = ChunkConfig::default();
        let r = parse_structured("<think>red chair by the window</think><answer>red chair by the window</answer>");
        assert!((consistency_reward_qa(&r, &e, &cfg) - 1.0).abs() < 1e-9);

        // 64 filler words, then a 64-word block identical to the answer-to-be.
        let filler: Vec<String> = (0..64).map(|i| format!("zq{i}")).collect();
        let target: Vec<String> = (0..64).map(|i| format!("lamp{i}")).collect();
        let think = format!("{} {}", filler.join(" "), target.join(" "));
        let raw = format!("<think>{think}</think><answer>{}</answer>", target.join(" "));
        let r = parse_structured(&raw);
        assert!((consistency_reward_qa(&r, &e, &cfg) - 1.0).abs() < 1e-9);

        assert_eq!(consistency_reward_qa(&parse_structured("<answer>x</answer>"), &e, &cfg), 0.0);
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_reward(1.0, 1.0, 1.0), 1.0);
        assert_eq!(composite_reward(0.0, 1.0, 1.0), 0.0);
        assert!((composite_reward(1.0, 0.64, 0.25) - (0.64f64 * 0.25).sqrt()).abs() < 1e-12);
        assert!((composite_reward(1.0, 0.64, 0.25) - 0.4).abs() < 1e-12);
        assert_eq!(composite_reward(1.0, 2.0, -1.0), 0.0);
        assert_eq!(composite_reward(1.0, 4.0, 1.0), 1.0);
    }

    #[test]
    fn score_response_mcq() {
        let e = HashedNgramEmbedder::default();
        let cfg = ChunkConfig::default();
        let rec = mcq("Frame B");
        let b = score_response(&rec, "<think>Frame B is higher, so B.</think><answer>B</answer>", &e, &cfg);
        assert_eq!(b, RewardBreakdown { format: 1.0, answer: 1.0, consistency: 1.0, composite: 1.0 });

        let b = score_response(&rec, "Frame B is higher. <answer>B</answer>", &e, &cfg);
        assert_eq!(b.format, 0.0);
        assert_eq!(b.answer, 1.0);
        assert_eq!(b.consistency, 0.0);
        assert_eq!(b.composite, 0.0);

        let b = score_response(&rec, "<think>It is the second frame.</think><answer>B</answer>", &e, &cfg);
        assert_eq!((b.answer, b.consistency, b.composite), (1.0, 0.0, 0.0));
    }

    #[test]
    fn score_response_qa_recomputes() {
        let e = HashedNgramEmbedder::default();
        let cfg = ChunkConfig::default();
        let rec = qa("the camera pans to the right");
        let raw = "<think>objects shift left, so the camera pans right</think><answer>camera pans right</answer>";
        let b = score_response(&rec, raw, &e, &cfg);
        let resp = parse_structured(raw);
        let a = qa_accuracy_reward("camera pans right", &rec, &e).unwrap();
        let c = consistency_reward_qa(&resp, &e, &cfg);
        assert_eq!(b.answer, a);
        assert_eq!(b.consistency, c);
        assert!((b.composite - (a * c).sqrt()).abs() < 1e-12);
        assert!(b.composite > 0.0 && b.composite < 1.0);
    }

    #[test]
    fn breakdown_json_keys() {
        let b = RewardBreakdown { format: 1.0, answer: 0.5, consistency: 0.5, composite: 0.5 };
        let v = serde_json::to_value(b).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["answer", "composite", "consistency", "format"]);
    }

    proptest! {
        #[test]
        fn composite_gating_bounds_symmetry(a in -0.5f64..1.5, c in -0.5f64..1.5) {
            prop_assert_eq!(composite_reward(0.0, a, c), 0.0);
            let v = composite_reward(1.0, a, c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, composite_reward(1.0, c, a));
        }

        #[test]
        fn composite_monotone(a in 0.0f64..1.0, d in 0.0f64..1.0, c in 0.0f64..1.0) {
            prop_assert!(composite_reward(1.0, (a + d).min(1.0), c) >= composite_reward(1.0, a, c));
        }

        #[test]
        fn parse_idempotent_on_answer(raw in ".{0,60}") {
            let first = parse_structured(&raw);
            if let Some(ans) = first.answer_text {
                let again = parse_structured(&format!("<answer>{ans}</answer>"));
                prop_assert_eq!(again.answer_text, Some(ans));
            }
        }

        #[test]
        fn score_bounds_and_gating(raw in "(<think>)?[a-d A-D]{0,20}(</think>)?(<answer>)?[A-D]?(</answer>)?") {
            let e = HashedNgramEmbedder::default();
            let b = score_response(&mcq("Frame C"), &raw, &e, &ChunkConfig::default());
            for v in [b.format, b.answer, b.consistency, b.composite] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if b.format == 0.0 {
                prop_assert_eq!(b.composite, 0.0);
            }
        }

        #[test]
        fn qa_self_similarity(x in "[a-z]{3,12}( [a-z]{1,8}){0,5}") {
            let e = HashedNgramEmbedder::default();
            prop_assert!((qa_accuracy_reward(&x, &qa(&x), &e).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}

//! Optional hosted-model clients: the fixed request texts for VQA pair
//! generation, frame captioning and answer extraction, plus the request and
//! response shapes. Only the `{…}` fields named on each builder are
//! substituted into the texts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::QuestionType;

pub const VQA_SYSTEM_BASE: &str = "You are an expert in Visual Question Answering (VQA) generation. Your task is to create a question-answer pair based on two input images and their text descriptions.

**Rules:**
1. **Analyze Inputs**: Carefully analyze the two provided frames, identified as **Frame A** (original ID: {frame_x_id}) and **Frame B** (original ID: {frame_y_id}), and their corresponding captions.
2. **Use Template**: Generate a question that follows the structure of the provided template. You must use the placeholders \"Frame A\" and \"Frame B\" in your question, NOT the original IDs. You must also fill in other placeholders (like {object_A}) with relevant objects or concepts visible in the images.";

pub const VQA_FORMAT_MCQ: &str = "3. **Format**: This is a Multiple-Choice Question (MCQ).
4. **JSON Output**: Your final output must be a single, valid JSON object with the following keys:
   - \"question\": The generated question string.
   - \"options\": A JSON object containing four plausible options, with keys \"A\", \"B\", \"C\", and \"D\". One option must be the correct answer.
   - \"answer\": The string value of the correct option (e.g., the text from option \"C\").
   Do not add any text outside the JSON object.";

pub const VQA_FORMAT_QA: &str = "3. **Format**: This is an open-ended Question-Answer (QA).
4. **JSON Output**: Your final output must be a single, valid JSON object with the following keys:
   - \"question\": The generated question string.
   - \"answer\": A concise, factual, open-ended answer string.
   The JSON object for a QA must not contain an \"options\" key. Do not add any text outside the JSON object.";

pub const CAPTION_INSTRUCTION: &str = "You are a meticulous and objective scene captioner. Your task is to generate a precise, factual, and comprehensive description of the provided 360-degree panoramic image and its metadata.

Your description must adhere to the following strict rules:
1. **Strictly Objective Tone**: Your language must be neutral and descriptive. DO NOT use interpretive, subjective, or emotional words. Avoid describing the \"mood,\" \"atmosphere,\" \"feel,\" or \"energy\" (e.g., do not use words like \"cozy,\" \"inviting,\" \"playful,\" \"serene,\" or \"elegant\").
2. **Structural-First Approach**: Begin with the room's physical layout, architectural features (e.g., \"The room is rectangular with white walls, a hardwood floor, and a flat white ceiling.\"), and light sources (e.g., \"Natural light enters from a large window on the north wall.\").
3. **Systematic Object Inventory**: Methodically describe each object from the metadata. For each object, state its key visual properties (color, material, shape, design) and its precise spatial relationship to other objects or room features.
4. **Factual and Comprehensive Report**: The final output must be a coherent, well-structured paragraph that reads like a technical report or an inventory list written in prose. It must not be a creative essay or a story. Ensure every object from the metadata is included.

Please generate the description now, following these rules precisely.";

pub const EXTRACT_MCQ: &str = "You are a text parsing expert. Based on the following question and model output, your task is to extract only the final option letter (A, B, C, or D). Do not provide any explanation or reasoning. Return only the single letter.
Question Type: {question_type}
Question: {question}";

pub const EXTRACT_QA: &str = "You are a text parsing expert. Based on the following question and model output, your task is to extract only the final, direct answer. Do not include any of the model's thought process or introductory phrases like 'The answer is:'. Provide only the clean answer text.

Question Type: {question_type}
Question: {question}";

/// System prompt for generating one VQA pair: the base rules with the two
/// original frame ids filled in, then the format section for `qtype`.
pub fn vqa_system_prompt(qtype: QuestionType, frame_x_id: u32, frame_y_id: u32) -> String {
    let base = VQA_SYSTEM_BASE
        .replace("{frame_x_id}", &frame_x_id.to_string())
        .replace("{frame_y_id}", &frame_y_id.to_string());
    let format = match qtype {
        QuestionType::Mcq => VQA_FORMAT_MCQ,
        QuestionType::Qa => VQA_FORMAT_QA,
    };
    format!("{base}\n{format}")
}

/// Extraction prompt with `{question_type}` and `{question}` substituted.
pub fn extraction_prompt(qtype: QuestionType, question: &str) -> String {
    let template = match qtype {
        QuestionType::Mcq => EXTRACT_MCQ,
        QuestionType::Qa => EXTRACT_QA,
    };
    template
        .replace("{question_type}", &qtype.to_string())
        .replace("{question}", question)
}

/// Failure reported by an external client.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ClientError {
    pub message: String,
    /// Whether the caller may retry the same request.
    pub retryable: bool,
}

impl ClientError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
}

/// One question-answer generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub system_prompt: String,
    /// Captions of Frame A and Frame B, when available.
    pub captions: Vec<Option<String>>,
    pub template_text: String,
}

/// The JSON object a generation model returns. `options` is absent for QA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<BTreeMap<String, String>>,
    pub answer: String,
}

pub trait ExternalAnswerClient {
    fn generate(&self, request: &AnswerRequest) -> Result<AnswerResponse, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    pub prompt: String,
    pub model_output: String,
}

impl ExtractionRequest {
    pub fn new(qtype: QuestionType, question: &str, model_output: &str) -> Self {
        Self {
            prompt: extraction_prompt(qtype, question),
            model_output: model_output.to_string(),
        }
    }
}

/// Returns the bare extracted answer string.
pub trait ExternalExtractorClient {
    fn extract(&self, request: &ExtractionRequest) -> Result<String, ClientError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_prompt_substitutes_only_frame_ids() {
        let p = vqa_system_prompt(QuestionType::Mcq, 12, 25);
        assert!(p.contains("**Frame A** (original ID: 12)"));
        assert!(p.contains("**Frame B** (original ID: 25)"));
        // The literal placeholder example stays in the instructions.
        assert!(p.contains("(like {object_A})"));
        assert!(p.ends_with("Do not add any text outside the JSON object."));
        assert!(p.contains("keys \"A\", \"B\", \"C\", and \"D\""));

        let q = vqa_system_prompt(QuestionType::Qa, 1, 2);
        assert!(q.contains("must not contain an \"options\" key"));
        assert!(!q.contains("four plausible options"));
    }

    #[test]
    fn extraction_prompt_substitution() {
        let p = extraction_prompt(QuestionType::Mcq, "Which frame?");
        assert!(p.ends_with("Question Type: MCQ\nQuestion: Which frame?"));
        assert!(p.contains("(A, B, C, or D)"));
        let p = extraction_prompt(QuestionType::Qa, "Describe it.");
        assert!(p.contains("'The answer is:'"));
        assert!(p.ends_with("Question Type: QA\nQuestion: Describe it."));
    }

    #[test]
    fn response_schema() {
        let r: AnswerResponse = serde_json::from_str(r#"{"question":"q","answer":"a"}"#).unwrap();
        assert!(r.options.is_none());
        let r: AnswerResponse =
            serde_json::from_str(r#"{"question":"q","options":{"A":"x","B":"y","C":"z","D":"w"},"answer":"z"}"#).unwrap();
        assert_eq!(r.options.unwrap()["C"], "z");
    }
}

//! Template-driven cross-frame VQA dataset generation.
//!
//! Frame pairs are drawn under a maximum id gap, template placeholders are
//! bound to objects visible in the pair, and answers come either from a
//! rule-based synthesizer over scene metadata or from an external client.

mod answer;
mod generate;
mod scene;
mod stats;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{RecordError, DEFAULT_MAX_FRAME_GAP};

pub use answer::{synthesize_answer, AnswerKind, SynthesizedAnswer};
pub use generate::{
    fill_template, generate_dataset, pluralize, sample_frame_pair, Binding, GeneratedDataset, GenerationReport,
};
pub use scene::{demo_scenes, load_scenes, parse_scenes, FrameMeta, ObjectMeta, SceneMetadata};
pub use stats::{dataset_stats, render_stats, CategoryStats, DatasetStats, SubCategoryStats, TypeCount};
pub use templates::{load_templates, parse_templates, shipped_templates, QuestionTemplate, TemplateType, PLACEHOLDERS};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("template file: {0}")]
    TemplateFile(String),
    #[error("duplicate template id {0}")]
    DuplicateTemplate(String),
    #[error("template {template_id}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { template_id: String, placeholder: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("scene file: {0}")]
    SceneFile(String),
    #[error("scene {scene_id}: {message}")]
    InvalidScene { scene_id: String, message: String },
    #[error("scene too sparse: {scene_id} has no frame pair within gap {max_gap}")]
    SceneTooSparse { scene_id: String, max_gap: u32 },
    #[error("binding failure: template {template_id}: {reason}")]
    BindingFailure { template_id: String, reason: String },
    #[error("answer client failed for template {template_id} after {attempts} attempt(s): {message}")]
    Client { template_id: String, attempts: u32, retryable: bool, message: String },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("question {index}: no valid question after {attempts} attempts; last error: {last}")]
    GenerationFailed { index: usize, attempts: u32, last: String },
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Main-category shares of the reference dataset, used as an optional
/// generation target.
pub const REFERENCE_CATEGORY_TARGETS: [(&str, f64); 5] = [
    ("1. Basic Understanding", 0.1895),
    ("2. Image Characteristics", 0.1811),
    ("3. Perspective Question Design", 0.2880),
    ("4. Advanced Reasoning", 0.1511),
    ("5. Quantitative Reasoning", 0.1903),
];

pub fn reference_category_targets() -> BTreeMap<String, f64> {
    // The published shares are rounded and total 1.0000 exactly.
    REFERENCE_CATEGORY_TARGETS
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub num_questions: usize,
    pub max_frame_gap: u32,
    pub split_train_fraction: f64,
    /// Share of questions per main category. `None` picks templates uniformly.
    pub category_targets: Option<BTreeMap<String, f64>>,
    /// Probability that a Flex template is rendered as MCQ.
    pub flex_mcq_probability: f64,
    /// Attempts per question before generation gives up.
    pub max_attempts: u32,
    /// Attempts per external client call.
    pub client_retries: u32,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            num_questions: 1000,
            max_frame_gap: DEFAULT_MAX_FRAME_GAP,
            split_train_fraction: 0.8,
            category_targets: None,
            flex_mcq_probability: 0.5,
            max_attempts: 64,
            client_retries: 3,
            seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidConfig(m));
        if self.max_frame_gap == 0 {
            return bad("max_frame_gap must be at least 1".into());
        }
        if !(self.split_train_fraction > 0.0 && self.split_train_fraction < 1.0) {
            return bad(format!("split_train_fraction {} not in (0, 1)", self.split_train_fraction));
        }
        if !(0.0..=1.0).contains(&self.flex_mcq_probability) {
            return bad(format!("flex_mcq_probability {} not in [0, 1]", self.flex_mcq_probability));
        }
        if self.max_attempts == 0 || self.client_retries == 0 {
            return bad("max_attempts and client_retries must be at least 1".into());
        }
        if let Some(targets) = &self.category_targets {
            if let Some((k, v)) = targets.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return bad(format!("category target {k:?} = {v} must be a non-negative number"));
            }
            let sum: f64 = targets.values().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return bad(format!("category targets sum to {sum}, expected 1"));
            }
        }
        Ok(())
    }
}

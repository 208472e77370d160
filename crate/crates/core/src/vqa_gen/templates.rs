//! Question templates: main category, sub-category, id, type and a text
//! pattern with `{placeholder}` slots.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GenError;

const SHIPPED_TEMPLATES: &str = include_str!("../../data/question_templates.json");

pub const PLACEHOLDERS: [&str; 9] = [
    "frame_X",
    "frame_Y",
    "object_A",
    "object_B",
    "object_C",
    "object_type_plural",
    "object_type_A_plural",
    "object_type_B_plural",
    "surface_object",
];

static PLACEHOLDER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{([^{}]*)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateType {
    #[serde(rename = "MCQ")]
    Mcq,
    #[serde(rename = "QA")]
    Qa,
    /// Either format; resolved per generated question.
    Flex,
}

impl fmt::Display for TemplateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateType::Mcq => "MCQ",
            TemplateType::Qa => "QA",
            TemplateType::Flex => "Flex",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub main_category: String,
    pub sub_category: String,
    pub template_id: String,
    pub qtype: TemplateType,
    pub text: String,
}

impl QuestionTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for cap in PLACEHOLDER.captures_iter(&self.text) {
            let name = cap.get(1).unwrap().as_str();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        self.placeholders().contains(&placeholder)
    }
}

/// Parses a JSON array of templates, rejecting unknown placeholders and
/// duplicate ids. Blank input yields an empty list.
pub fn parse_templates(json: &str) -> Result<Vec<QuestionTemplate>, GenError> {
    if json.trim().is_empty() {
        return Ok(Vec::new());
    }
    let templates: Vec<QuestionTemplate> =
        serde_json::from_str(json).map_err(|e| GenError::TemplateFile(e.to_string()))?;
    let mut ids = BTreeSet::new();
    for t in &templates {
        if !ids.insert(t.template_id.as_str()) {
            return Err(GenError::DuplicateTemplate(t.template_id.clone()));
        }
        if let Some(bad) = t.placeholders().into_iter().find(|p| !PLACEHOLDERS.contains(p)) {
            return Err(GenError::UnknownPlaceholder {
                template_id: t.template_id.clone(),
                placeholder: bad.to_string(),
            });
        }
    }
    Ok(templates)
}

pub fn load_templates(path: &Path) -> Result<Vec<QuestionTemplate>, GenError> {
    let text = std::fs::read_to_string(path).map_err(|e| GenError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_templates(&text)
}

/// The full shipped template table.
pub fn shipped_templates() -> Vec<QuestionTemplate> {
    parse_templates(SHIPPED_TEMPLATES).expect("shipped templates are valid")
}

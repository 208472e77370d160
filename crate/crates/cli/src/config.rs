use std::fmt;
use std::path::Path;

use anyhow::Context;
use panovqa::reward::ChunkConfig;
use panovqa::{EmbedderConfig, GenerationConfig, GrpoConfig};
use serde::{Deserialize, Serialize};

/// Bad flag or config value; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// Contents of the `--config` TOML file. Every section is optional and
/// every field inside a section falls back to its default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: Option<GenerationConfig>,
    pub train: Option<GrpoConfig>,
    pub chunks: ChunkConfig,
    pub embedder: EmbedderConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Keys missing from `[train]` take the toy-task defaults rather than
    /// the fine-tuning ones.
    fn parse(text: &str) -> Result<Self, toml::de::Error> {
        let mut table: toml::Table = toml::from_str(text)?;
        if let Some(toml::Value::Table(train)) = table.get_mut("train") {
            let toml::Value::Table(mut merged) = toml::Value::try_from(GrpoConfig::toy()).expect("config serializes")
            else {
                unreachable!("GrpoConfig serializes to a table")
            };
            merged.extend(std::mem::take(train));
            *train = merged;
        }
        toml::Value::Table(table).try_into()
    }

    pub fn generation(&self) -> GenerationConfig {
        self.gen.clone().unwrap_or_default()
    }

    /// Training defaults are the toy-task settings, not the fine-tuning ones.
    pub fn training(&self) -> GrpoConfig {
        self.train.clone().unwrap_or_else(GrpoConfig::toy)
    }
}

/// Overwrites `slot` when a flag (or its environment variable) was given.
pub fn apply<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Prints the resolved settings to stderr as one JSON line.
pub fn echo<T: Serialize>(command: &str, resolved: &T) {
    let json = serde_json::to_string(resolved).expect("config serializes");
    eprintln!("[{command}] resolved config: {json}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections() {
        let cfg = FileConfig::parse(
            r#"
            [train]
            iterations = 20
            [gen]
            seed = 9
            [gen.category_targets]
            "1. Basic Understanding" = 1.0
            "#,
        )
        .unwrap();
        let train = cfg.training();
        assert_eq!(train.iterations, 20);
        assert_eq!(train.epsilon, 0.2);
        assert_eq!(train.learning_rate, GrpoConfig::toy().learning_rate);
        let gen = cfg.generation();
        assert_eq!(gen.seed, 9);
        assert_eq!(gen.max_frame_gap, 20);
        assert_eq!(gen.category_targets.unwrap().len(), 1);
        assert_eq!(cfg.chunks, ChunkConfig::default());
    }

    #[test]
    fn defaults_without_file() {
        let cfg = FileConfig::load(None).unwrap();
        assert_eq!(cfg.training(), GrpoConfig::toy());
        assert_eq!(cfg.generation(), GenerationConfig::default());
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(FileConfig::parse("[bogus]\nx = 1").is_err());
        assert!(FileConfig::parse("[train]\nitters = 1").is_err());
    }

    #[test]
    fn flags_override() {
        let mut x = 1;
        apply(&mut x, None);
        assert_eq!(x, 1);
        apply(&mut x, Some(3));
        assert_eq!(x, 3);
    }
}

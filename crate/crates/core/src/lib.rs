//! Composite rewards for structured VQA responses, GRPO on a toy categorical
//! policy, a template-driven cross-frame VQA generator, and an evaluation
//! harness with hierarchical answer extraction.

pub mod embedding;
pub mod external;
pub mod eval;
pub mod grpo;
pub mod record;
pub mod reward;
pub mod toy_env;
pub mod vqa_gen;

pub use embedding::{cosine_similarity, Embedder, EmbedderConfig, EmbeddingVector, HashedNgramEmbedder};
pub use grpo::{GrpoConfig, SampleGroup, TrainStats};
pub use record::{AnswerSource, QuestionRecord, QuestionType};
pub use reward::{ChunkConfig, RewardBreakdown, RewardEngine, RewardScorer, StructuredResponse};
pub use toy_env::{ToyEnvironment, ToyPolicy};
pub use vqa_gen::{GenerationConfig, QuestionTemplate, SceneMetadata};

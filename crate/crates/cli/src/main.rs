//! `panovqa`: dataset generation, reward scoring, toy GRPO training and
//! evaluation from one binary.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panovqa::eval::EvalError;
use panovqa::vqa_gen::GenError;

#[derive(Parser)]
#[command(name = "panovqa", version, about = "Cross-frame VQA generation, rewards, GRPO training and evaluation")]
struct Cli {
    /// TOML file with [gen], [train], [chunks] and [embedder] sections.
    #[arg(long, global = true, env = "PANOVQA_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test VQA dataset from scene metadata.
    Gen(GenArgs),
    /// Train the toy policy with GRPO.
    Train(TrainArgs),
    /// Print the reward breakdown for one response.
    Score(ScoreArgs),
    /// Score model outputs against a dataset and print a category report.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Scene metadata JSON (one scene or an array). Defaults to the bundled demo scenes.
    #[arg(long, env = "PANOVQA_GEN_SCENES")]
    pub scenes: Option<PathBuf>,
    /// Question template JSON. Defaults to the bundled table.
    #[arg(long, env = "PANOVQA_GEN_TEMPLATES")]
    pub templates: Option<PathBuf>,
    /// Output directory for train.jsonl, test.jsonl and stats.json.
    #[arg(long, env = "PANOVQA_GEN_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "PANOVQA_GEN_SEED")]
    pub seed: Option<u64>,
    /// Number of questions to generate.
    #[arg(long, env = "PANOVQA_GEN_COUNT")]
    pub count: Option<usize>,
    /// Largest allowed frame id difference.
    #[arg(long, env = "PANOVQA_GEN_MAX_GAP")]
    pub max_gap: Option<u32>,
    /// Fraction of each main category placed in the training split.
    #[arg(long, env = "PANOVQA_GEN_SPLIT")]
    pub split: Option<f64>,
    /// `reference` for the published category mix, or a JSON file mapping main category to share.
    #[arg(long, env = "PANOVQA_GEN_CATEGORY_TARGETS")]
    pub category_targets: Option<String>,
    /// Probability that a Flex template becomes MCQ.
    #[arg(long, env = "PANOVQA_GEN_FLEX_MCQ_PROB")]
    pub flex_mcq_prob: Option<f64>,
    /// Print this many generated records for manual review.
    #[arg(long)]
    pub sample: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Output directory for trace.jsonl and policy.json.
    #[arg(long, env = "PANOVQA_TRAIN_OUT")]
    pub out: PathBuf,
    /// Dataset JSONL to train on instead of the built-in toy questions.
    #[arg(long, env = "PANOVQA_TRAIN_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, env = "PANOVQA_TRAIN_GROUP_SIZE")]
    pub group_size: Option<usize>,
    #[arg(long, env = "PANOVQA_TRAIN_EPSILON")]
    pub epsilon: Option<f64>,
    #[arg(long, env = "PANOVQA_TRAIN_BETA")]
    pub beta: Option<f64>,
    #[arg(long, env = "PANOVQA_TRAIN_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "PANOVQA_TRAIN_ITERS")]
    pub iters: Option<usize>,
    #[arg(long, env = "PANOVQA_TRAIN_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "PANOVQA_TRAIN_INNER_EPOCHS")]
    pub inner_epochs: Option<usize>,
    /// Trailing iterations averaged in the printed summary.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Dataset JSONL holding the question. Defaults to the built-in toy questions.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Question id; defaults to the first record.
    #[arg(long)]
    pub id: Option<String>,
    /// Response text.
    #[arg(long, conflicts_with = "response_file", required_unless_present = "response_file")]
    pub response: Option<String>,
    /// File holding the response text.
    #[arg(long)]
    pub response_file: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, env = "PANOVQA_EVAL_DATASET")]
    pub dataset: PathBuf,
    /// Model outputs JSONL: {"question_id": ..., "raw_text": ...} per line.
    #[arg(long, env = "PANOVQA_EVAL_OUTPUTS")]
    pub outputs: PathBuf,
    /// text, csv or json.
    #[arg(long, env = "PANOVQA_EVAL_FORMAT", default_value = "text")]
    pub format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// 2 for usage and input-file errors, 3 for outputs naming unknown
/// questions, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<config::UsageError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(EvalError::UnknownQuestionIds(_)) = cause.downcast_ref::<EvalError>() {
            return 3;
        }
        if let Some(GenError::Io { .. }) = cause.downcast_ref::<GenError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&file, a),
        Command::Train(a) => commands::train(&file, a),
        Command::Score(a) => commands::score(&file, a),
        Command::Eval(a) => commands::eval(&file, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

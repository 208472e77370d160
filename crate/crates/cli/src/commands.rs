use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use panovqa::eval::{evaluate, parse_outputs, ReportFormat};
use panovqa::grpo::train as run_grpo;
use panovqa::record::{parse_jsonl, to_jsonl, QuestionRecord};
use panovqa::toy_env::{builtin_questions, default_templates};
use panovqa::vqa_gen::{
    demo_scenes, generate_dataset, load_scenes, load_templates, reference_category_targets, render_stats,
    shipped_templates,
};
use panovqa::{HashedNgramEmbedder, RewardEngine, RewardScorer, ToyEnvironment};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{apply, echo, usage, FileConfig};
use crate::{EvalArgs, GenArgs, ScoreArgs, TrainArgs};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<QuestionRecord>> {
    parse_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn display(path: &Option<impl AsRef<Path>>) -> String {
    path.as_ref().map_or("<bundled>".into(), |p| p.as_ref().display().to_string())
}

fn engine(file: &FileConfig) -> Result<RewardEngine<HashedNgramEmbedder>> {
    let embedder = HashedNgramEmbedder::new(file.embedder.clone()).map_err(usage)?;
    RewardEngine::new(embedder, file.chunks).map_err(usage)
}

fn category_targets(arg: &str) -> Result<BTreeMap<String, f64>> {
    if arg == "reference" {
        return Ok(reference_category_targets());
    }
    serde_json::from_str(&read(Path::new(arg))?).map_err(|e| usage(format!("category targets {arg}: {e}")))
}

pub fn gen(file: &FileConfig, a: GenArgs) -> Result<()> {
    let mut cfg = file.generation();
    apply(&mut cfg.seed, a.seed);
    apply(&mut cfg.num_questions, a.count);
    apply(&mut cfg.max_frame_gap, a.max_gap);
    apply(&mut cfg.split_train_fraction, a.split);
    apply(&mut cfg.flex_mcq_probability, a.flex_mcq_prob);
    if let Some(t) = &a.category_targets {
        cfg.category_targets = Some(category_targets(t)?);
    }
    cfg.validate().map_err(usage)?;
    echo(
        "gen",
        &json!({
            "generation": cfg,
            "scenes": display(&a.scenes),
            "templates": display(&a.templates),
            "out": a.out.display().to_string(),
        }),
    );

    let scenes = match &a.scenes {
        Some(p) => load_scenes(p)?,
        None => demo_scenes(),
    };
    let templates = match &a.templates {
        Some(p) => load_templates(p)?,
        None => shipped_templates(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = generate_dataset(&scenes, &templates, &cfg, &mut rng, None)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("train.jsonl"), &to_jsonl(&data.train))?;
    write(&a.out.join("test.jsonl"), &to_jsonl(&data.test))?;
    write(&a.out.join("stats.json"), &(serde_json::to_string_pretty(&data.report)? + "\n"))?;

    print!("{}", render_stats(&data.report.overall));
    println!("train {} | test {}", data.report.train_size, data.report.test_size);
    if let Some(k) = a.sample {
        let all: Vec<QuestionRecord> = data.train.iter().chain(&data.test).cloned().collect();
        let picked: Vec<QuestionRecord> = all.choose_multiple(&mut rng, k).cloned().collect();
        println!("--- {} sampled record(s) for review ---", picked.len());
        print!("{}", to_jsonl(&picked));
    }
    Ok(())
}

pub fn train(file: &FileConfig, a: TrainArgs) -> Result<()> {
    let mut cfg = file.training();
    apply(&mut cfg.group_size, a.group_size);
    apply(&mut cfg.epsilon, a.epsilon);
    apply(&mut cfg.beta, a.beta);
    apply(&mut cfg.learning_rate, a.lr);
    apply(&mut cfg.iterations, a.iters);
    apply(&mut cfg.seed, a.seed);
    apply(&mut cfg.inner_epochs, a.inner_epochs);
    cfg.validate().map_err(usage)?;
    let scorer = engine(file)?;
    echo(
        "train",
        &json!({
            "grpo": cfg,
            "chunks": file.chunks,
            "embedder": file.embedder,
            "dataset": display(&a.dataset),
            "out": a.out.display().to_string(),
        }),
    );

    let env = match &a.dataset {
        Some(p) => ToyEnvironment::new(read_records(p)?, default_templates(), false)?,
        None => ToyEnvironment::default(),
    };
    let (policy, stats) = run_grpo(&env, &cfg, &scorer)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("trace.jsonl"), &stats.to_jsonl())?;
    let probabilities = (0..policy.num_contexts())
        .map(|c| policy.probs(c))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<&str> = env.templates().iter().map(|t| t.name.as_str()).collect();
    let saved = json!({ "templates": names, "policy": policy, "probabilities": probabilities });
    write(&a.out.join("policy.json"), &(serde_json::to_string_pretty(&saved)? + "\n"))?;

    let w = a.window;
    let summary = json!({
        "iterations": stats.iterations.len(),
        "window": w.min(stats.iterations.len()),
        "mean_format": stats.tail_mean(w, |s| s.mean_format),
        "mean_answer": stats.tail_mean(w, |s| s.mean_answer),
        "mean_consistency": stats.tail_mean(w, |s| s.mean_consistency),
        "mean_composite": stats.tail_mean(w, |s| s.mean_reward),
        "final_kl_to_reference": stats.iterations.last().map(|s| s.kl_to_reference),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn score(file: &FileConfig, a: ScoreArgs) -> Result<()> {
    let records = match &a.dataset {
        Some(p) => read_records(p)?,
        None => builtin_questions(),
    };
    let record = match &a.id {
        Some(id) => records
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| usage(format!("no question with id {id:?}")))?,
        None => records.first().ok_or_else(|| usage("dataset is empty"))?,
    };
    let response = match (&a.response, &a.response_file) {
        (Some(text), _) => text.clone(),
        (None, Some(p)) => read(p)?,
        (None, None) => return Err(usage("one of --response or --response-file is required")),
    };
    let scorer = engine(file)?;
    echo("score", &json!({ "chunks": file.chunks, "embedder": file.embedder, "question_id": record.id }));
    let breakdown = scorer.score(record, &response);
    println!("{}", serde_json::to_string_pretty(&breakdown)?);
    Ok(())
}

pub fn eval(file: &FileConfig, a: EvalArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse().map_err(usage)?;
    let dataset = read_records(&a.dataset)?;
    let outputs = parse_outputs(&read(&a.outputs)?).with_context(|| format!("parsing {}", a.outputs.display()))?;
    let scorer = engine(file)?;
    echo(
        "eval",
        &json!({
            "embedder": file.embedder,
            "dataset": a.dataset.display().to_string(),
            "outputs": a.outputs.display().to_string(),
            "format": a.format,
        }),
    );
    let ev = evaluate(&outputs, &dataset, scorer.embedder(), None)?;
    let methods: BTreeMap<String, usize> = ev.method_counts().into_iter().map(|(m, n)| (m.to_string(), n)).collect();
    eprintln!("[eval] extraction: {} | missing outputs: {}", json!(methods), ev.missing());
    let rendered = ev.report.render(format);
    match &a.out {
        Some(p) => write(p, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

//! A desk-scale stand-in for a language model: a categorical policy over a
//! fixed set of response templates. Each template renders a complete raw
//! response for a question and exercises a particular reward outcome
//! (well-formed and correct, wrong option, missing tag, unsupported answer).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{CandidateSample, SampleGroup};
use crate::record::{QuestionRecord, QuestionType, OPTION_KEYS};

const DEFAULT_TEMPLATES: &str = include_str!("../data/response_templates.json");

/// Wrong answer used by QA renderings of `{wrong}`.
pub const QA_WRONG_ANSWER: &str = "nothing can be determined";

#[derive(Debug, Error, PartialEq)]
pub enum ToyError {
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("unknown template {0}")]
    UnknownTemplate(usize),
    #[error("unknown context {0}")]
    UnknownContext(usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("template file: {0}")]
    TemplateFile(String),
    #[error("environment has no {0}")]
    Empty(&'static str),
}

/// Softmax policy over `K` response templates, with one logit row per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    logits: Vec<Vec<f64>>,
    temperature: f64,
}

impl ToyPolicy {
    /// Uniform policy (all-zero logits).
    pub fn uniform(num_contexts: usize, num_templates: usize) -> Self {
        Self {
            logits: vec![vec![0.0; num_templates]; num_contexts],
            temperature: 1.0,
        }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>, temperature: f64) -> Result<Self, ToyError> {
        if logits.is_empty() || logits[0].is_empty() {
            return Err(ToyError::InvalidPolicy("empty logits".into()));
        }
        let k = logits[0].len();
        if logits.iter().any(|row| row.len() != k) {
            return Err(ToyError::InvalidPolicy("ragged logits".into()));
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ToyError::InvalidPolicy("non-finite logit".into()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(ToyError::InvalidPolicy(format!("temperature {temperature}")));
        }
        Ok(Self { logits, temperature })
    }

    pub fn num_templates(&self) -> usize {
        self.logits[0].len()
    }

    pub fn num_contexts(&self) -> usize {
        self.logits.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self, context: usize) -> &[f64] {
        &self.logits[context]
    }

    pub fn logits_mut(&mut self, context: usize) -> &mut [f64] {
        &mut self.logits[context]
    }

    pub fn all_logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    fn check_context(&self, context: usize) -> Result<(), ToyError> {
        if context < self.logits.len() {
            Ok(())
        } else {
            Err(ToyError::UnknownContext(context))
        }
    }

    /// Log-softmax of the scaled logits for `context`.
    pub fn log_probs(&self, context: usize) -> Result<Vec<f64>, ToyError> {
        self.check_context(context)?;
        let scaled: Vec<f64> = self.logits[context].iter().map(|z| z / self.temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        Ok(scaled.iter().map(|z| z - lse).collect())
    }

    pub fn probs(&self, context: usize) -> Result<Vec<f64>, ToyError> {
        Ok(self.log_probs(context)?.into_iter().map(f64::exp).collect())
    }

    pub fn logprob(&self, context: usize, template_id: usize) -> Result<f64, ToyError> {
        if template_id >= self.num_templates() {
            return Err(ToyError::UnknownTemplate(template_id));
        }
        Ok(self.log_probs(context)?[template_id])
    }

    pub fn entropy(&self, context: usize) -> Result<f64, ToyError> {
        Ok(-self
            .log_probs(context)?
            .iter()
            .map(|lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
            .sum::<f64>())
    }

    /// Draws one template index by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> Result<usize, ToyError> {
        let probs = self.probs(context)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(k);
            }
        }
        // Rounding left the cumulative sum just under 1.
        Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
    }
}

/// A response pattern. `mcq` and `qa` are rendered with the placeholders
/// `{answer}`, `{answer_text}`, `{wrong}` and `{wrong_text}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub id: usize,
    pub name: String,
    pub mcq: String,
    pub qa: String,
}

impl ResponseTemplate {
    pub fn render(&self, question: &QuestionRecord) -> String {
        let (answer, answer_text, wrong, wrong_text, pattern) = match question.qtype {
            QuestionType::Mcq => {
                let correct = question.correct_letter().unwrap_or("A");
                let idx = OPTION_KEYS.iter().position(|k| *k == correct).unwrap_or(0);
                let wrong = OPTION_KEYS[(idx + 1) % OPTION_KEYS.len()];
                (
                    correct.to_string(),
                    question.option_text(correct).unwrap_or(&question.answer).to_string(),
                    wrong.to_string(),
                    question.option_text(wrong).unwrap_or_default().to_string(),
                    &self.mcq,
                )
            }
            QuestionType::Qa => (
                question.answer.clone(),
                question.answer.clone(),
                QA_WRONG_ANSWER.to_string(),
                QA_WRONG_ANSWER.to_string(),
                &self.qa,
            ),
        };
        pattern
            .replace("{answer_text}", &answer_text)
            .replace("{wrong_text}", &wrong_text)
            .replace("{answer}", &answer)
            .replace("{wrong}", &wrong)
    }
}

pub fn default_templates() -> Vec<ResponseTemplate> {
    parse_templates(DEFAULT_TEMPLATES).expect("embedded response templates are valid")
}

/// Parses a JSON array of templates; ids must be `0..K` in order.
pub fn parse_templates(json: &str) -> Result<Vec<ResponseTemplate>, ToyError> {
    let templates: Vec<ResponseTemplate> =
        serde_json::from_str(json).map_err(|e| ToyError::TemplateFile(e.to_string()))?;
    for (i, t) in templates.iter().enumerate() {
        if t.id != i {
            return Err(ToyError::TemplateFile(format!("template at position {i} has id {}", t.id)));
        }
    }
    if templates.is_empty() {
        return Err(ToyError::Empty("templates"));
    }
    Ok(templates)
}

/// Built-in toy questions: four MCQ and two QA items.
pub fn builtin_questions() -> Vec<QuestionRecord> {
    let mcq = |id: &str, tid: &str, main: &str, sub: &str, q: &str, opts: [&str; 4], answer: &str| {
        QuestionRecord {
            id: id.into(),
            scene_id: "toy".into(),
            frame_a_id: 4,
            frame_b_id: 11,
            main_category: main.into(),
            sub_category: sub.into(),
            template_id: tid.into(),
            qtype: QuestionType::Mcq,
            question: q.into(),
            options: Some(
                OPTION_KEYS
                    .iter()
                    .zip(opts)
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
            ),
            answer: answer.into(),
            answer_source: None,
        }
    };
    let qa = |id: &str, tid: &str, main: &str, sub: &str, q: &str, answer: &str| QuestionRecord {
        qtype: QuestionType::Qa,
        options: None,
        ..mcq(id, tid, main, sub, q, ["", "", "", ""], answer)
    };
    vec![
        mcq(
            "toy-0",
            "T1.1.1",
            "1. Basic Understanding",
            "1.1 Perspective Definition & Identification",
            "Comparing Frame A and Frame B, which one was taken from a higher viewpoint?",
            ["Frame A", "Frame B", "Both frames equally", "Neither frame"],
            "Frame B",
        ),
        mcq(
            "toy-1",
            "T5.2.1",
            "5. Quantitative Reasoning",
            "5.2 Disambiguation & Total Count",
            "By carefully examining both Frame A and Frame B, determine the total count of distinct chairs in the entire scene.",
            ["2", "4", "3", "5"],
            "3",
        ),
        mcq(
            "toy-2",
            "T3.4.2",
            "3. Perspective Question Design",
            "3.4 Size Judgment",
            "Based on the visual evidence in both frames, which object, sofa or armchair, is likely larger in reality?",
            ["armchair", "They are the same size", "It cannot be determined", "sofa"],
            "sofa",
        ),
        mcq(
            "toy-3",
            "T4.2.2",
            "4. Advanced Reasoning",
            "4.2 Inferring Implied Relationships",
            "Based on the arrangement of objects visible across both frames, what do you infer is the primary use of this room?",
            ["bedroom", "living room", "office", "kitchen"],
            "office",
        ),
        qa(
            "toy-4",
            "T3.3.1",
            "3. Perspective Question Design",
            "3.3 Dynamic Perspective Change",
            "Describe the type of camera motion between Frame A and Frame B.",
            "The camera pans to the right while moving slightly forward.",
        ),
        qa(
            "toy-5",
            "T2.3.2",
            "2. Image Characteristics",
            "2.3 Multi-view Fusion",
            "By combining information from both views, describe the approximate location of the desk within the room.",
            "The desk stands in the corner next to the window.",
        ),
    ]
}

/// Questions plus the response templates a [`ToyPolicy`] chooses among.
#[derive(Debug, Clone)]
pub struct ToyEnvironment {
    questions: Vec<QuestionRecord>,
    templates: Vec<ResponseTemplate>,
    per_question_logits: bool,
}

impl Default for ToyEnvironment {
    fn default() -> Self {
        Self {
            questions: builtin_questions(),
            templates: default_templates(),
            per_question_logits: false,
        }
    }
}

impl ToyEnvironment {
    pub fn new(
        questions: Vec<QuestionRecord>,
        templates: Vec<ResponseTemplate>,
        per_question_logits: bool,
    ) -> Result<Self, ToyError> {
        if questions.is_empty() {
            return Err(ToyError::Empty("questions"));
        }
        if templates.is_empty() {
            return Err(ToyError::Empty("templates"));
        }
        Ok(Self {
            questions,
            templates,
            per_question_logits,
        })
    }

    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn templates(&self) -> &[ResponseTemplate] {
        &self.templates
    }

    pub fn num_contexts(&self) -> usize {
        if self.per_question_logits {
            self.questions.len()
        } else {
            1
        }
    }

    /// Logit row used for question `question_index`.
    pub fn context_of(&self, question_index: usize) -> usize {
        if self.per_question_logits {
            question_index
        } else {
            0
        }
    }

    pub fn initial_policy(&self) -> ToyPolicy {
        ToyPolicy::uniform(self.num_contexts(), self.templates.len())
    }

    pub fn render(&self, template_id: usize, question: &QuestionRecord) -> Result<String, ToyError> {
        self.templates
            .get(template_id)
            .map(|t| t.render(question))
            .ok_or(ToyError::UnknownTemplate(template_id))
    }

    /// Draws `n` i.i.d. responses for question `question_index`. Rewards are
    /// left at 0 for the caller to fill in.
    pub fn sample_group<R: Rng + ?Sized>(
        &self,
        policy: &ToyPolicy,
        question_index: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<SampleGroup, ToyError> {
        if n < 2 {
            return Err(ToyError::GroupTooSmall(n));
        }
        let question = &self.questions[question_index];
        let context = self.context_of(question_index);
        let log_probs = policy.log_probs(context)?;
        let samples = (0..n)
            .map(|_| {
                let k = policy.sample(context, rng)?;
                Ok(CandidateSample {
                    template_id: k,
                    response_text: self.render(k, question)?,
                    logprob_old: log_probs[k],
                    reward: 0.0,
                })
            })
            .collect::<Result<Vec<_>, ToyError>>()?;
        Ok(SampleGroup {
            question_id: question.id.clone(),
            context,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedNgramEmbedder;
    use crate::reward::{score_response, ChunkConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logprob() {
        let p = ToyPolicy::uniform(1, 5);
        for k in 0..5 {
            assert!((p.logprob(0, k).unwrap() - (0.2f64).ln()).abs() < 1e-12);
        }
        assert_eq!(p.logprob(0, 5), Err(ToyError::UnknownTemplate(5)));
        assert_eq!(p.logprob(1, 0), Err(ToyError::UnknownContext(1)));
    }

    #[test]
    fn shift_invariance_and_direct_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = rng.gen_range(-100.0..100.0);
            let p = ToyPolicy::from_logits(vec![z.clone()], 1.0).unwrap();
            let shifted = ToyPolicy::from_logits(vec![z.iter().map(|v| v + c).collect()], 1.0).unwrap();
            // Direct softmax without max-subtraction.
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            let lp = p.log_probs(0).unwrap();
            for k in 0..6 {
                assert!((lp[k] - (z[k].exp() / denom).ln()).abs() < 1e-9);
                assert!((lp[k] - shifted.logprob(0, k).unwrap()).abs() < 1e-9);
            }
            assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn temperature_scales_logits() {
        let p = ToyPolicy::from_logits(vec![vec![2.0, 0.0]], 2.0).unwrap();
        let q = ToyPolicy::from_logits(vec![vec![1.0, 0.0]], 1.0).unwrap();
        assert_eq!(p.log_probs(0).unwrap(), q.log_probs(0).unwrap());
        assert!(ToyPolicy::from_logits(vec![vec![1.0]], 0.0).is_err());
        assert!(ToyPolicy::from_logits(vec![vec![1.0], vec![1.0, 2.0]], 1.0).is_err());
    }

    #[test]
    fn sampling_frequencies() {
        let env = ToyEnvironment::new(
            builtin_questions(),
            default_templates().into_iter().take(4).collect(),
            false,
        )
        .unwrap();
        let p = env.initial_policy();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = env.sample_group(&p, 0, 4000, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for s in &g.samples {
            counts[s.template_id] += 1;
            assert!((s.logprob_old - 0.25f64.ln()).abs() < 1e-12);
        }
        for c in counts {
            assert!((c as f64 / 4000.0 - 0.25).abs() <= 0.03, "{counts:?}");
        }
    }

    #[test]
    fn saturated_logit_dominates() {
        let env = ToyEnvironment::default();
        let mut z = vec![0.0; env.templates().len()];
        z[2] = 20.0;
        let p = ToyPolicy::from_logits(vec![z], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = env.sample_group(&p, 1, 10_000, &mut rng).unwrap();
        let hits = g.samples.iter().filter(|s| s.template_id == 2).count();
        assert!(hits as f64 / 10_000.0 >= 0.999);
    }

    #[test]
    fn sampling_is_seeded() {
        let env = ToyEnvironment::default();
        let p = env.initial_policy();
        let a = env.sample_group(&p, 2, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = env.sample_group(&p, 2, 16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            env.sample_group(&p, 0, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(ToyError::GroupTooSmall(1))
        );
    }

    #[test]
    fn templates_cover_each_failure_mode() {
        let env = ToyEnvironment::default();
        let e = HashedNgramEmbedder::default();
        let cfg = ChunkConfig::default();
        let by_name = |name: &str| env.templates().iter().find(|t| t.name == name).unwrap().id;
        for (qi, q) in env.questions().iter().enumerate() {
            let score = |name: &str| score_response(q, &env.render(by_name(name), q).unwrap(), &e, &cfg);
            let good = score("formatted_correct");
            assert_eq!(good.format, 1.0, "question {qi}");
            assert!(good.composite >= 0.85, "question {qi}: {good:?}");
            assert_eq!(score("missing_think").format, 0.0);
            assert_eq!(score("missing_answer").format, 0.0);
            assert_eq!(score("bare_answer").format, 0.0);
            let wrong = score("formatted_wrong");
            assert_eq!(wrong.format, 1.0);
            assert!(wrong.answer < 0.5, "question {qi}: {wrong:?}");
            let inconsistent = score("inconsistent");
            assert_eq!(inconsistent.format, 1.0);
            assert!(inconsistent.consistency < 0.5, "question {qi}: {inconsistent:?}");
            if q.qtype == QuestionType::Mcq {
                assert_eq!(wrong.composite, 0.0);
                assert_eq!((inconsistent.answer, inconsistent.composite), (1.0, 0.0));
                assert_eq!(score("letter_in_word").consistency, 0.0);
            }
        }
    }

    #[test]
    fn template_file_validation() {
        assert!(parse_templates("[]").is_err());
        assert!(parse_templates(r#"[{"id":1,"name":"x","mcq":"","qa":""}]"#).is_err());
        assert_eq!(parse_templates(r#"[{"id":0,"name":"x","mcq":"m","qa":"q"}]"#).unwrap().len(), 1);
    }
}

//! Answer and option synthesis for filled templates.
//!
//! Counting and room-use questions are answered from scene metadata. Questions
//! that need pixel-level geometry get a seeded synthetic answer drawn from a
//! fixed candidate list and are labelled as such. An external client replaces
//! both when configured.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::generate::Binding;
use super::scene::{FrameMeta, SceneMetadata};
use super::templates::{QuestionTemplate, TemplateType};
use super::{GenError, GenerationConfig};
use crate::external::{vqa_system_prompt, AnswerRequest, AnswerResponse, ExternalAnswerClient};
use crate::record::{normalize_answer, AnswerSource, QuestionType, OPTION_KEYS};

const ROOM_TYPES: [&str; 6] = ["office", "living room", "bedroom", "kitchen", "bathroom", "dining room"];

/// How a template is answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    FrameChoice,
    YesNo,
    Placement,
    FrontBehind,
    Occluder,
    LargestShift,
    LargerObject,
    CloserTo,
    Relationship,
    RoomUse,
    DepthCue,
    CameraReposition,
    Illumination,
    CountTotal,
    CountRevealed,
    CountOnSurface,
    CompareCounts,
    ClarifyCount,
    ShapeChange,
    EdgeToCenter,
    Location,
    CameraDirection,
    LeftRightSwap,
    CameraMotion,
    Parallax,
    SizeChange,
    TopView,
    SceneLayers,
}

impl AnswerKind {
    /// Kind for a shipped template id; custom templates fall back on their
    /// placeholders.
    pub fn for_template(template: &QuestionTemplate) -> Self {
        use AnswerKind::*;
        match template.template_id.as_str() {
            "T1.1.1" | "T1.1.2" | "T1.2.2" | "T1.3.2" | "T2.1.1" | "T2.2.1" => FrameChoice,
            "T2.1.2" | "T2.2.2" | "T4.3.1" => YesNo,
            "T3.1.2" => Placement,
            "T3.2.1" => FrontBehind,
            "T1.3.1" => Occluder,
            "T3.3.2" => LargestShift,
            "T3.4.2" => LargerObject,
            "T4.1.2" => CloserTo,
            "T4.2.1" => Relationship,
            "T4.2.2" => RoomUse,
            "T2.3.1" => DepthCue,
            "T3.5.1" => CameraReposition,
            "T4.3.2" => Illumination,
            "T5.1.1" | "T5.2.1" => CountTotal,
            "T5.1.2" => CountRevealed,
            "T5.3.1" => CountOnSurface,
            "T5.3.2" => CompareCounts,
            "T5.2.2" => ClarifyCount,
            "T1.2.1" => ShapeChange,
            "T2.1.3" => EdgeToCenter,
            "T2.3.2" => Location,
            "T3.1.1" => CameraDirection,
            "T3.2.2" => LeftRightSwap,
            "T3.3.1" => CameraMotion,
            "T3.3.3" => Parallax,
            "T3.4.1" => SizeChange,
            "T3.5.2" => TopView,
            "T4.1.1" => SceneLayers,
            _ if template.uses("object_type_A_plural") => CompareCounts,
            _ if template.uses("surface_object") => CountOnSurface,
            _ if template.uses("object_type_plural") => CountTotal,
            _ => FrameChoice,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedAnswer {
    pub qtype: QuestionType,
    /// Question text returned by an external client, replacing the filled template.
    pub question: Option<String>,
    pub answer: String,
    pub options: Option<BTreeMap<String, String>>,
    pub source: AnswerSource,
}

/// Correct answer plus ordered distractors.
struct Candidates {
    correct: String,
    distractors: Vec<String>,
    source: AnswerSource,
}

impl Candidates {
    fn rule(correct: impl Into<String>, distractors: Vec<String>) -> Self {
        Self { correct: correct.into(), distractors, source: AnswerSource::Rule }
    }

    /// Seeded choice of the correct entry; the rest become distractors.
    fn synthetic<R: Rng + ?Sized>(mut variants: Vec<String>, rng: &mut R) -> Self {
        let i = rng.gen_range(0..variants.len());
        let correct = variants.remove(i);
        Self { correct, distractors: variants, source: AnswerSource::Synthetic }
    }
}

fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Off-by-k count distractors in the order n-1, n+1, n+2, n+3, n-2.
pub(crate) fn count_distractors(n: u32) -> Vec<String> {
    [-1i64, 1, 2, 3, -2]
        .iter()
        .map(|k| i64::from(n) + k)
        .filter(|v| *v >= 0)
        .take(3)
        .map(|v| v.to_string())
        .collect()
}

/// Uppercases the first letter of a sentence that opens with an object name.
fn sentence(s: String) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

fn items(n: u32) -> String {
    if n == 1 {
        "1 item".to_string()
    } else {
        format!("{n} items")
    }
}

struct Pair<'a> {
    a: &'a FrameMeta,
    b: &'a FrameMeta,
}

impl Pair<'_> {
    fn max_over<F: Fn(&FrameMeta) -> u32>(&self, f: F) -> u32 {
        f(self.a).max(f(self.b))
    }

    fn names(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for o in self.a.objects.iter().chain(&self.b.objects) {
            if !out.contains(&o.name.as_str()) {
                out.push(&o.name);
            }
        }
        out
    }
}

fn object_category<'a>(scene: &'a SceneMetadata, name: &str) -> Option<&'a str> {
    scene.frames.iter().find_map(|f| f.object(name)).map(|o| o.category.as_str())
}

/// Names in `scene` other than `exclude`, shuffled, then stably ordered so
/// objects sharing `category` come first.
fn object_distractors<R: Rng + ?Sized>(
    scene: &SceneMetadata,
    exclude: &[&str],
    category: Option<&str>,
    rng: &mut R,
) -> Vec<String> {
    let mut names: Vec<(&str, &str)> = Vec::new();
    for o in scene.frames.iter().flat_map(|f| &f.objects) {
        if !exclude.contains(&o.name.as_str()) && !names.iter().any(|(n, _)| *n == o.name) {
            names.push((&o.name, &o.category));
        }
    }
    names.shuffle(rng);
    names.sort_by_key(|(_, c)| Some(*c) != category);
    names.into_iter().map(|(n, _)| n.to_string()).collect()
}

fn binding_failure(template: &QuestionTemplate, reason: impl Into<String>) -> GenError {
    GenError::BindingFailure { template_id: template.template_id.clone(), reason: reason.into() }
}

fn candidates<R: Rng + ?Sized>(
    template: &QuestionTemplate,
    binding: &Binding,
    scene: &SceneMetadata,
    rng: &mut R,
) -> Result<Candidates, GenError> {
    use AnswerKind::*;
    let frame = |id| {
        scene
            .frame(id)
            .ok_or_else(|| binding_failure(template, format!("frame {id} not in scene")))
    };
    let pair = Pair { a: frame(binding.frame_a)?, b: frame(binding.frame_b)? };
    let val = |name: &str| {
        binding
            .value(name)
            .map(str::to_string)
            .ok_or_else(|| binding_failure(template, format!("{{{name}}} is not bound")))
    };
    let cat = |name: &str| {
        binding
            .category(name)
            .map(str::to_string)
            .ok_or_else(|| binding_failure(template, format!("{{{name}}} has no category")))
    };

    let c = match AnswerKind::for_template(template) {
        FrameChoice => {
            let first = *["Frame A", "Frame B"].choose(rng).unwrap();
            let other = if first == "Frame A" { "Frame B" } else { "Frame A" };
            Candidates {
                correct: first.into(),
                distractors: strings([other, "Both frames equally", "Neither frame"]),
                source: AnswerSource::Synthetic,
            }
        }
        YesNo => {
            let first = *["Yes", "No"].choose(rng).unwrap();
            let other = if first == "Yes" { "No" } else { "Yes" };
            Candidates {
                correct: first.into(),
                distractors: strings([other, "Only partially", "Cannot be determined"]),
                source: AnswerSource::Synthetic,
            }
        }
        Placement => {
            let a = val("object_A")?;
            let rests_on = pair.a.object(&a).or(pair.b.object(&a)).and_then(|o| o.on.clone());
            let all = strings(["Freestanding", "Against a wall", "Against another object", "Hanging from the ceiling"]);
            if rests_on.is_some() {
                let distractors = all.iter().filter(|s| *s != "Against another object").cloned().collect();
                Candidates::rule("Against another object", distractors)
            } else {
                let mut c = Candidates::synthetic(all[..2].to_vec(), rng);
                c.distractors.extend(all[2..].iter().cloned());
                c
            }
        }
        FrontBehind => {
            let b = val("object_B")?;
            let mut c = Candidates::synthetic(vec![format!("In front of {b}"), format!("Behind {b}")], rng);
            c.distractors.extend([format!("Beside {b}"), "Cannot be determined".to_string()]);
            c
        }
        Occluder | LargestShift => {
            let exclude = binding.value("object_A").into_iter().collect::<Vec<_>>();
            let pool: Vec<&str> = pair.names().into_iter().filter(|n| !exclude.contains(n)).collect();
            let correct = pool
                .choose(rng)
                .ok_or_else(|| binding_failure(template, "no candidate object in the frame pair"))?
                .to_string();
            let mut ex = exclude.clone();
            ex.push(&correct);
            let distractors = object_distractors(scene, &ex, object_category(scene, &correct), rng);
            Candidates { correct, distractors, source: AnswerSource::Synthetic }
        }
        LargerObject => {
            let mut c = Candidates::synthetic(vec![val("object_A")?, val("object_B")?], rng);
            c.distractors.extend(strings(["They are about the same size", "Cannot be determined"]));
            c
        }
        CloserTo => {
            let (b, c) = (val("object_B")?, val("object_C")?);
            let mut out = Candidates::synthetic(vec![format!("Closer to {b}"), format!("Closer to {c}")], rng);
            out.distractors.extend(strings(["Equally close to both", "Far from both"]));
            out
        }
        Relationship => {
            let (a, b) = (val("object_A")?, val("object_B")?);
            let stacked = [pair.a, pair.b].iter().any(|f| {
                f.objects.iter().any(|o| {
                    (o.name == a && o.on.as_deref() == Some(&b)) || (o.name == b && o.on.as_deref() == Some(&a))
                })
            });
            let on = "One rests on the other";
            let rest = strings(["They are used together", "One is used to store the other", "They are unrelated"]);
            if stacked {
                Candidates::rule(on, rest)
            } else {
                let mut c = Candidates::synthetic(rest, rng);
                c.distractors.insert(0, on.to_string());
                c
            }
        }
        RoomUse => {
            let mut others: Vec<String> = ROOM_TYPES.iter().map(|s| s.to_string()).collect();
            match scene.room_type.as_deref() {
                Some(room) => {
                    others.retain(|r| normalize_answer(r) != normalize_answer(room));
                    others.shuffle(rng);
                    Candidates::rule(room, others)
                }
                None => {
                    let mut c = Candidates::synthetic(others, rng);
                    c.distractors.shuffle(rng);
                    c
                }
            }
        }
        DepthCue => Candidates::synthetic(
            strings([
                "Parallax between the two objects",
                "A change in which object occludes the other",
                "A change in their relative apparent size",
                "Shadows and shading on the floor",
            ]),
            rng,
        ),
        CameraReposition => {
            let a = val("object_A")?;
            Candidates::synthetic(
                vec![
                    format!("To the far side of {a}"),
                    format!("Directly above {a}"),
                    format!("Further back from {a}"),
                    format!("Lower, at the height of {a}"),
                ],
                rng,
            )
        }
        Illumination => {
            let b = val("object_B")?;
            let a = val("object_A")?;
            let mut c = Candidates::synthetic(
                vec![format!("The top surface of {b}"), format!("The side of {b} facing {a}")],
                rng,
            );
            c.distractors.extend([format!("The side of {b} facing away from {a}"), format!("The underside of {b}")]);
            c
        }
        CountTotal => {
            let category = cat("object_type_plural")?;
            let n = pair.max_over(|f| f.category_count(&category));
            Candidates::rule(n.to_string(), count_distractors(n))
        }
        CountRevealed => {
            let category = cat("object_type_plural")?;
            let n = pair.b.category_count(&category).saturating_sub(pair.a.category_count(&category));
            Candidates::rule(n.to_string(), count_distractors(n))
        }
        CountOnSurface => {
            let category = cat("object_type_plural")?;
            let surface = val("surface_object")?;
            let n = pair.max_over(|f| f.count_on(&category, &surface));
            Candidates::rule(n.to_string(), count_distractors(n))
        }
        CompareCounts => {
            let (ca, cb) = (cat("object_type_A_plural")?, cat("object_type_B_plural")?);
            let (pa, pb) = (val("object_type_A_plural")?, val("object_type_B_plural")?);
            let (na, nb) = (pair.max_over(|f| f.category_count(&ca)), pair.max_over(|f| f.category_count(&cb)));
            let mut all = vec![format!("More {pa}"), format!("More {pb}"), "About the same number".to_string()];
            let idx = match na.cmp(&nb) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Equal => 2,
            };
            let correct = all.remove(idx);
            all.push("Cannot be determined".to_string());
            Candidates::rule(correct, all)
        }
        ClarifyCount => {
            let a = val("object_A")?;
            let n = pair.max_over(|f| f.object(&a).map_or(0, |o| o.count_hint));
            let alt = if n == 1 { 2 } else { n - 1 };
            Candidates::rule(
                format!("Frame B, {}", items(n)),
                vec![
                    format!("Frame A, {}", items(n)),
                    format!("Frame B, {}", items(alt)),
                    format!("Frame A, {}", items(alt)),
                ],
            )
        }
        ShapeChange => {
            let a = val("object_A")?;
            Candidates::synthetic(
                ["more foreshortened", "more elongated", "rounder", "more angular"]
                    .iter()
                    .map(|s| sentence(format!("{a} appears {s} in Frame B than in Frame A.")))
                    .collect(),
                rng,
            )
        }
        EdgeToCenter => Candidates::rule(
            "The camera turned or moved toward the object, bringing it closer to the optical axis.",
            strings([
                "The camera moved away from the object.",
                "The camera zoomed out without moving.",
                "The object itself moved while the camera stayed still.",
            ]),
        ),
        Location => {
            let a = val("object_A")?;
            Candidates::synthetic(
                ["near a corner", "along a wall", "in the center", "near the doorway"]
                    .iter()
                    .map(|s| sentence(format!("{a} is {s} of the room.")))
                    .collect(),
                rng,
            )
        }
        CameraDirection => {
            let a = val("object_A")?;
            Candidates::synthetic(
                ["clockwise", "counterclockwise", "toward", "away from"]
                    .iter()
                    .map(|d| match *d {
                        "toward" | "away from" => format!("The camera moved straight {d} {a}."),
                        _ => format!("The camera moved {d} around {a} toward its side."),
                    })
                    .collect(),
                rng,
            )
        }
        LeftRightSwap => Candidates::rule(
            "The camera moved laterally past the two objects, so the viewpoint change reversed their left-right order.",
            strings([
                "One of the objects was physically moved between the frames.",
                "The image in one frame is mirrored.",
                "The camera zoomed in on one object.",
            ]),
        ),
        CameraMotion => Candidates::synthetic(
            ["a pan", "a rotation", "a zoom", "a sideways translation"]
                .iter()
                .map(|m| format!("The camera performed {m}."))
                .collect(),
            rng,
        ),
        Parallax => Candidates::rule(
            "A larger shift means the object is closer to the camera.",
            strings([
                "A larger shift means the object is farther from the camera.",
                "A larger shift means the object is larger.",
                "The shift does not depend on distance.",
            ]),
        ),
        SizeChange => {
            let a = val("object_A")?;
            Candidates::synthetic(
                vec![
                    format!("The camera is closer to {a} in Frame A than in Frame B."),
                    format!("The camera is farther from {a} in Frame A than in Frame B."),
                    sentence(format!("{a} is near the image edge in Frame A, where distortion enlarges it.")),
                    sentence(format!("{a} is partly occluded in Frame B.")),
                ],
                rng,
            )
        }
        TopView => {
            let a = val("object_A")?;
            Candidates::synthetic(
                ["a rectangular", "a round", "a square", "an L-shaped"]
                    .iter()
                    .map(|s| format!("From above, {a} would appear as {s} outline."))
                    .collect(),
                rng,
            )
        }
        SceneLayers => {
            let mut names = pair.names();
            if names.len() < 3 {
                return Err(binding_failure(template, "fewer than 3 objects in the frame pair"));
            }
            names.shuffle(rng);
            let layers = |x: &[&str]| format!("Foreground: {}; mid-ground: {}; background: {}.", x[0], x[1], x[2]);
            let correct = layers(&names[..3]);
            let mut distractors = Vec::new();
            for perm in [[1, 0, 2], [2, 1, 0], [0, 2, 1]] {
                distractors.push(layers(&perm.map(|i| names[i])));
            }
            Candidates { correct, distractors, source: AnswerSource::Synthetic }
        }
    };
    Ok(c)
}

/// Picks the correct option plus the first three distinct distractors and
/// shuffles them into keys A-D.
fn assemble_mcq<R: Rng + ?Sized>(
    template: &QuestionTemplate,
    c: &Candidates,
    rng: &mut R,
) -> Result<BTreeMap<String, String>, GenError> {
    let mut texts = vec![c.correct.clone()];
    for d in &c.distractors {
        if texts.len() == OPTION_KEYS.len() {
            break;
        }
        if !texts.iter().any(|t| normalize_answer(t) == normalize_answer(d)) {
            texts.push(d.clone());
        }
    }
    if texts.len() < OPTION_KEYS.len() {
        return Err(binding_failure(template, "fewer than 3 distinct distractors"));
    }
    texts.shuffle(rng);
    Ok(OPTION_KEYS.iter().map(|k| k.to_string()).zip(texts).collect())
}

fn resolve_qtype<R: Rng + ?Sized>(template: &QuestionTemplate, cfg: &GenerationConfig, rng: &mut R) -> QuestionType {
    match template.qtype {
        TemplateType::Mcq => QuestionType::Mcq,
        TemplateType::Qa => QuestionType::Qa,
        TemplateType::Flex => {
            if rng.gen_bool(cfg.flex_mcq_probability) {
                QuestionType::Mcq
            } else {
                QuestionType::Qa
            }
        }
    }
}

fn check_response(qtype: QuestionType, r: &AnswerResponse) -> Result<(), String> {
    if r.question.trim().is_empty() || r.answer.trim().is_empty() {
        return Err("empty question or answer".into());
    }
    if r.question.contains(['{', '}']) {
        return Err("question contains unresolved braces".into());
    }
    match (qtype, &r.options) {
        (QuestionType::Mcq, Some(o)) => {
            let keys: Vec<&str> = o.keys().map(String::as_str).collect();
            if keys != OPTION_KEYS {
                return Err(format!("option keys {keys:?}"));
            }
            let hits = o.values().filter(|v| normalize_answer(v) == normalize_answer(&r.answer)).count();
            if hits != 1 {
                return Err(format!("answer matches {hits} options"));
            }
            Ok(())
        }
        (QuestionType::Mcq, None) => Err("MCQ response without options".into()),
        (QuestionType::Qa, Some(_)) => Err("QA response with options".into()),
        (QuestionType::Qa, None) => Ok(()),
    }
}

fn ask_client(
    client: &dyn ExternalAnswerClient,
    template: &QuestionTemplate,
    binding: &Binding,
    scene: &SceneMetadata,
    qtype: QuestionType,
    cfg: &GenerationConfig,
) -> Result<SynthesizedAnswer, GenError> {
    let caption = |id| scene.frame(id).and_then(|f| f.caption.clone());
    let request = AnswerRequest {
        system_prompt: vqa_system_prompt(qtype, binding.frame_a, binding.frame_b),
        captions: vec![caption(binding.frame_a), caption(binding.frame_b)],
        template_text: template.text.clone(),
    };
    let mut attempts = 0;
    loop {
        attempts += 1;
        let err = match client.generate(&request) {
            Ok(r) => match check_response(qtype, &r) {
                Ok(()) => {
                    return Ok(SynthesizedAnswer {
                        qtype,
                        question: Some(r.question),
                        answer: r.answer,
                        options: r.options,
                        source: AnswerSource::External,
                    })
                }
                Err(m) => crate::external::ClientError::retryable(format!("malformed response: {m}")),
            },
            Err(e) => e,
        };
        if !err.retryable || attempts >= cfg.client_retries {
            return Err(GenError::Client {
                template_id: template.template_id.clone(),
                attempts,
                retryable: err.retryable,
                message: err.message,
            });
        }
    }
}

/// Resolves the question type (Flex by a seeded coin flip) and produces the
/// answer, plus four options for MCQ.
pub fn synthesize_answer<R: Rng + ?Sized>(
    template: &QuestionTemplate,
    binding: &Binding,
    scene: &SceneMetadata,
    cfg: &GenerationConfig,
    rng: &mut R,
    client: Option<&dyn ExternalAnswerClient>,
) -> Result<SynthesizedAnswer, GenError> {
    let qtype = resolve_qtype(template, cfg, rng);
    if let Some(client) = client {
        return ask_client(client, template, binding, scene, qtype, cfg);
    }
    let c = candidates(template, binding, scene, rng)?;
    let options = match qtype {
        QuestionType::Mcq => Some(assemble_mcq(template, &c, rng)?),
        QuestionType::Qa => None,
    };
    Ok(SynthesizedAnswer { qtype, question: None, answer: c.correct, options, source: c.source })
}

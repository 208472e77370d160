use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::answer::synthesize_answer;
use super::scene::SceneMetadata;
use super::stats::{dataset_stats, DatasetStats};
use super::templates::QuestionTemplate;
use super::{GenError, GenerationConfig};
use crate::external::ExternalAnswerClient;
use crate::record::QuestionRecord;

/// Values bound to a template's placeholders for one frame pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub frame_a: u32,
    pub frame_b: u32,
    /// Rendered text per placeholder name.
    pub values: BTreeMap<String, String>,
    /// Raw object category behind each `object_type_*` placeholder.
    pub categories: BTreeMap<String, String>,
}

impl Binding {
    pub fn value(&self, placeholder: &str) -> Option<&str> {
        self.values.get(placeholder).map(String::as_str)
    }

    pub fn category(&self, placeholder: &str) -> Option<&str> {
        self.categories.get(placeholder).map(String::as_str)
    }
}

/// English plural for an object category.
pub fn pluralize(word: &str) -> String {
    let lower = word.to_lowercase();
    let consonant_y = lower.ends_with('y')
        && !matches!(lower.chars().rev().nth(1), Some('a' | 'e' | 'i' | 'o' | 'u'));
    if consonant_y {
        format!("{}ies", &word[..word.len() - 1])
    } else if lower.ends_with("lf") {
        format!("{}ves", &word[..word.len() - 1])
    } else if ["s", "x", "z", "ch", "sh"].iter().any(|s| lower.ends_with(s)) {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

/// Ordered frame-id pairs with `0 < |a - b| <= max_gap`, sorted.
pub(crate) fn admissible_pairs(scene: &SceneMetadata, max_gap: u32) -> Vec<(u32, u32)> {
    let mut ids: Vec<u32> = scene.frames.iter().map(|f| f.frame_id).collect();
    ids.sort_unstable();
    let mut pairs = Vec::new();
    for &a in &ids {
        for &b in &ids {
            let gap = a.abs_diff(b);
            if gap > 0 && gap <= max_gap {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Uniform draw over admissible ordered pairs; the first id is Frame A.
pub fn sample_frame_pair<R: Rng + ?Sized>(
    scene: &SceneMetadata,
    cfg: &GenerationConfig,
    rng: &mut R,
) -> Result<(u32, u32), GenError> {
    admissible_pairs(scene, cfg.max_frame_gap)
        .choose(rng)
        .copied()
        .ok_or_else(|| GenError::SceneTooSparse { scene_id: scene.scene_id.clone(), max_gap: cfg.max_frame_gap })
}

fn push_unique<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    if !out.contains(&s) {
        out.push(s);
    }
}

/// Binds every placeholder of `template` for the frame pair and renders the
/// question. Frames render as "Frame A" / "Frame B"; object placeholders get
/// distinct object names visible in either frame.
pub fn fill_template<R: Rng + ?Sized>(
    template: &QuestionTemplate,
    pair: (u32, u32),
    scene: &SceneMetadata,
    rng: &mut R,
) -> Result<(String, Binding), GenError> {
    let fail = |reason: String| GenError::BindingFailure { template_id: template.template_id.clone(), reason };
    let frame = |id| scene.frame(id).ok_or_else(|| fail(format!("frame {id} not in scene {}", scene.scene_id)));
    let frames = [frame(pair.0)?, frame(pair.1)?];
    let objects: Vec<_> = frames.iter().flat_map(|f| &f.objects).collect();

    let mut names = Vec::new();
    let mut categories = Vec::new();
    for o in &objects {
        push_unique(&mut names, &o.name);
        push_unique(&mut categories, &o.category);
    }

    let mut binding = Binding { frame_a: pair.0, frame_b: pair.1, values: BTreeMap::new(), categories: BTreeMap::new() };
    binding.values.insert("frame_X".into(), "Frame A".into());
    binding.values.insert("frame_Y".into(), "Frame B".into());
    let bind_category = |b: &mut Binding, placeholder: &str, category: &str| {
        b.values.insert(placeholder.into(), pluralize(category));
        b.categories.insert(placeholder.into(), category.into());
    };

    if template.uses("surface_object") {
        let mut surfaces = Vec::new();
        for o in &objects {
            if let Some(s) = o.on.as_deref() {
                if names.contains(&s) {
                    push_unique(&mut surfaces, s);
                }
            }
        }
        let surface = *surfaces.choose(rng).ok_or_else(|| fail("no object rests on a visible surface".into()))?;
        binding.values.insert("surface_object".into(), surface.into());
        names.retain(|n| *n != surface);
        if template.uses("object_type_plural") {
            let mut on_it = Vec::new();
            for o in objects.iter().filter(|o| o.on.as_deref() == Some(surface)) {
                push_unique(&mut on_it, &o.category);
            }
            let category = *on_it.choose(rng).expect("surface has at least one object");
            bind_category(&mut binding, "object_type_plural", category);
        }
    }
    if template.uses("object_type_plural") && binding.value("object_type_plural").is_none() {
        let category = *categories.choose(rng).expect("frames have objects");
        bind_category(&mut binding, "object_type_plural", category);
    }
    let typed: Vec<&str> = ["object_type_A_plural", "object_type_B_plural"]
        .into_iter()
        .filter(|p| template.uses(p))
        .collect();
    if !typed.is_empty() {
        if categories.len() < typed.len() {
            return Err(fail(format!("{} distinct categories needed, {} visible", typed.len(), categories.len())));
        }
        let (chosen, _) = categories.partial_shuffle(rng, typed.len());
        for (p, c) in typed.iter().zip(chosen.iter()) {
            bind_category(&mut binding, p, c);
        }
    }
    let object_slots: Vec<&str> = ["object_A", "object_B", "object_C"]
        .into_iter()
        .filter(|p| template.uses(p))
        .collect();
    if !object_slots.is_empty() {
        if names.len() < object_slots.len() {
            return Err(fail(format!("{} distinct objects needed, {} visible", object_slots.len(), names.len())));
        }
        let (chosen, _) = names.partial_shuffle(rng, object_slots.len());
        for (p, n) in object_slots.iter().zip(chosen.iter()) {
            binding.values.insert(p.to_string(), n.to_string());
        }
    }

    let mut text = template.text.clone();
    for p in template.placeholders() {
        let value = binding.value(p).ok_or_else(|| fail(format!("{{{p}}} left unbound")))?;
        text = text.replace(&format!("{{{p}}}"), value);
    }
    if text.contains(['{', '}']) {
        return Err(fail("unresolved braces after substitution".into()));
    }
    Ok((text, binding))
}

/// Largest-remainder apportionment of `total` items over `weights`.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Ties go to the earlier entry so the result is deterministic.
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub requested: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Attempts discarded for binding failures before a question succeeded.
    pub discarded_attempts: usize,
    pub answer_sources: BTreeMap<String, usize>,
    /// Question type chosen for Flex templates.
    pub flex_outcomes: BTreeMap<String, usize>,
    pub overall: DatasetStats,
    pub train: DatasetStats,
    pub test: DatasetStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub train: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
    pub report: GenerationReport,
}

/// Generates `cfg.num_questions` records and splits them per main category.
/// The output depends only on the inputs and the state of `rng`.
pub fn generate_dataset<R: Rng + ?Sized>(
    scenes: &[SceneMetadata],
    templates: &[QuestionTemplate],
    cfg: &GenerationConfig,
    rng: &mut R,
    client: Option<&dyn ExternalAnswerClient>,
) -> Result<GeneratedDataset, GenError> {
    cfg.validate()?;
    if templates.is_empty() {
        return Err(GenError::InvalidConfig("no templates".into()));
    }
    let first = scenes.first().ok_or_else(|| GenError::InvalidConfig("no scenes".into()))?;
    let usable: Vec<(&SceneMetadata, Vec<(u32, u32)>)> = scenes
        .iter()
        .map(|s| (s, admissible_pairs(s, cfg.max_frame_gap)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(GenError::SceneTooSparse { scene_id: first.scene_id.clone(), max_gap: cfg.max_frame_gap });
    }

    let mut by_category: BTreeMap<&str, Vec<&QuestionTemplate>> = BTreeMap::new();
    for t in templates {
        by_category.entry(&t.main_category).or_default().push(t);
    }
    // One slot per question: the category to draw from, or any template.
    let mut slots: Vec<Option<&str>> = match &cfg.category_targets {
        None => vec![None; cfg.num_questions],
        Some(targets) => {
            let (names, weights): (Vec<&str>, Vec<f64>) = targets.iter().map(|(k, v)| (k.as_str(), *v)).unzip();
            if let Some(missing) = targets.iter().find(|(k, v)| **v > 0.0 && !by_category.contains_key(k.as_str())) {
                return Err(GenError::InvalidConfig(format!("no templates for target category {:?}", missing.0)));
            }
            let quotas = apportion(cfg.num_questions, &weights);
            names.iter().zip(quotas).flat_map(|(n, q)| std::iter::repeat_n(Some(*n), q)).collect()
        }
    };
    slots.shuffle(rng);

    let mut records = Vec::with_capacity(slots.len());
    let mut discarded = 0;
    let mut sources: BTreeMap<String, usize> = BTreeMap::new();
    let mut flex: BTreeMap<String, usize> = BTreeMap::new();
    for (index, slot) in slots.iter().enumerate() {
        let pool: &[&QuestionTemplate] = match slot {
            Some(c) => &by_category[c],
            None => &[],
        };
        let mut last = String::new();
        let mut done = None;
        for _ in 0..cfg.max_attempts {
            let (scene, pairs) = usable.choose(rng).unwrap();
            let pair = *pairs.choose(rng).unwrap();
            let template = match slot {
                Some(_) => *pool.choose(rng).unwrap(),
                None => templates.choose(rng).unwrap(),
            };
            let attempt = fill_template(template, pair, scene, rng).and_then(|(question, binding)| {
                let ans = synthesize_answer(template, &binding, scene, cfg, rng, client)?;
                Ok((template, scene, pair, question, ans))
            });
            match attempt {
                Ok(x) => {
                    done = Some(x);
                    break;
                }
                Err(e @ GenError::BindingFailure { .. }) => {
                    discarded += 1;
                    last = e.to_string();
                }
                Err(e) => return Err(e),
            }
        }
        let (template, scene, pair, question, ans) =
            done.ok_or(GenError::GenerationFailed { index, attempts: cfg.max_attempts, last })?;
        *sources.entry(format!("{:?}", ans.source).to_lowercase()).or_default() += 1;
        if template.qtype == super::TemplateType::Flex {
            *flex.entry(ans.qtype.to_string()).or_default() += 1;
        }
        let record = QuestionRecord {
            id: format!("q{index:06}"),
            scene_id: scene.scene_id.clone(),
            frame_a_id: pair.0,
            frame_b_id: pair.1,
            main_category: template.main_category.clone(),
            sub_category: template.sub_category.clone(),
            template_id: template.template_id.clone(),
            qtype: ans.qtype,
            question: ans.question.unwrap_or(question),
            options: ans.options,
            answer: ans.answer,
            answer_source: Some(ans.source),
        };
        record.validate(cfg.max_frame_gap)?;
        records.push(record);
    }

    let (train, test) = stratified_split(records, cfg.split_train_fraction);
    let mut all = train.clone();
    all.extend(test.iter().cloned());
    let report = GenerationReport {
        requested: cfg.num_questions,
        train_size: train.len(),
        test_size: test.len(),
        discarded_attempts: discarded,
        answer_sources: sources,
        flex_outcomes: flex,
        overall: dataset_stats(&all),
        train: dataset_stats(&train),
        test: dataset_stats(&test),
    };
    Ok(GeneratedDataset { train, test, report })
}

/// Per main category, the first `round(n * fraction)` records in generation
/// order go to train. Both halves keep generation order.
pub(crate) fn stratified_split(records: Vec<QuestionRecord>, fraction: f64) -> (Vec<QuestionRecord>, Vec<QuestionRecord>) {
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        *totals.entry(r.main_category.clone()).or_default() += 1;
    }
    let quota: BTreeMap<String, usize> =
        totals.into_iter().map(|(k, n)| (k, (n as f64 * fraction).round() as usize)).collect();
    let mut taken: BTreeMap<String, usize> = BTreeMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in records {
        let t = taken.entry(r.main_category.clone()).or_default();
        if *t < quota[&r.main_category] {
            *t += 1;
            train.push(r);
        } else {
            test.push(r);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{normalize_answer, to_jsonl, QuestionType};
    use crate::vqa_gen::scene::{demo_scenes, parse_scenes};
    use crate::vqa_gen::templates::shipped_templates;
    use crate::vqa_gen::reference_category_targets;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn scene_with_frames(ids: &[u32]) -> SceneMetadata {
        let frames: Vec<String> = ids
            .iter()
            .map(|id| format!(r#"{{"frame_id":{id},"objects":[{{"name":"sofa","category":"sofa"}}]}}"#))
            .collect();
        parse_scenes(&format!(r#"{{"scene_id":"s","frames":[{}]}}"#, frames.join(","))).unwrap().remove(0)
    }

    fn template(id: &str) -> QuestionTemplate {
        shipped_templates().into_iter().find(|t| t.template_id == id).unwrap()
    }

    #[test]
    fn plurals() {
        for (w, p) in [("chair", "chairs"), ("shelf", "shelves"), ("box", "boxes"), ("bench", "benches"),
                       ("library", "libraries"), ("toy", "toys"), ("glass", "glasses")] {
            assert_eq!(pluralize(w), p);
        }
    }

    #[test]
    fn sparse_scene_is_rejected() {
        let cfg = GenerationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_frame_pair(&scene_with_frames(&[1, 30]), &cfg, &mut rng).unwrap_err();
        assert!(err.to_string().contains("scene too sparse"));
        let pair = sample_frame_pair(&scene_with_frames(&[12, 25]), &cfg, &mut rng).unwrap();
        assert!(pair == (12, 25) || pair == (25, 12));
    }

    #[test]
    fn all_ordered_pairs_observed() {
        // Oracle: the six ordered pairs of {1, 2, 3}, all within gap 20.
        let expected: BTreeSet<(u32, u32)> =
            [(1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2)].into_iter().collect();
        let scene = scene_with_frames(&[1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seen: BTreeSet<_> = (0..600)
            .map(|_| sample_frame_pair(&scene, &GenerationConfig::default(), &mut rng).unwrap())
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn frames_render_as_labels() {
        let scenes = demo_scenes();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (q, b) = fill_template(&template("T1.1.1"), (3, 4), &scenes[0], &mut rng).unwrap();
        assert_eq!(q, "Comparing Frame A and Frame B, which one was taken from a higher viewpoint?");
        assert_eq!((b.frame_a, b.frame_b), (3, 4));
    }

    #[test]
    fn object_binding_is_distinct_and_visible() {
        let scene = parse_scenes(
            r#"{"scene_id":"s","frames":[{"frame_id":1,"objects":[{"name":"sofa","category":"sofa"}]},
                {"frame_id":2,"objects":[{"name":"lamp","category":"lamp"},{"name":"rug","category":"rug"}]}]}"#,
        )
        .unwrap()
        .remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (q, _) = fill_template(&template("T1.2.1"), (1, 2), &scene, &mut rng).unwrap();
        assert!(q.contains("apparent shape of "));
        for _ in 0..50 {
            let (_, b) = fill_template(&template("T4.1.2"), (1, 2), &scene, &mut rng).unwrap();
            let objs: BTreeSet<_> = ["object_A", "object_B", "object_C"].iter().map(|p| b.value(p).unwrap()).collect();
            assert_eq!(objs, ["lamp", "rug", "sofa"].into_iter().collect());
        }
        let sparse = scene_with_frames(&[1, 2]);
        let err = fill_template(&template("T4.1.2"), (1, 2), &sparse, &mut rng).unwrap_err();
        assert!(err.to_string().contains("binding failure"));
    }

    #[test]
    fn surface_binding_uses_resting_categories() {
        let scenes = demo_scenes();
        let t = template("T5.3.1");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in &scenes {
            for (a, b) in admissible_pairs(s, 20).into_iter().take(30) {
                let Ok((q, bind)) = fill_template(&t, (a, b), s, &mut rng) else { continue };
                let surface = bind.value("surface_object").unwrap();
                let cat = bind.category("object_type_plural").unwrap();
                assert!(!q.contains('{'));
                let resting = [a, b].iter().any(|id| s.frame(*id).unwrap().count_on(cat, surface) > 0);
                assert!(resting, "{cat} on {surface}");
            }
        }
    }

    #[test]
    fn apportion_matches_targets() {
        assert_eq!(apportion(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(0, &[1.0]), vec![0]);
        let w: Vec<f64> = reference_category_targets().into_values().collect();
        assert_eq!(apportion(1000, &w), vec![190, 181, 288, 151, 190]);
    }

    fn generate(cfg: &GenerationConfig) -> GeneratedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        generate_dataset(&demo_scenes(), &shipped_templates(), cfg, &mut rng, None).unwrap()
    }

    #[test]
    fn thousand_questions_hit_targets_and_split() {
        let cfg = GenerationConfig {
            num_questions: 1000,
            category_targets: Some(reference_category_targets()),
            seed: 5,
            ..Default::default()
        };
        let d = generate(&cfg);
        assert_eq!(d.train.len() + d.test.len(), 1000);
        assert!(d.train.len().abs_diff(800) <= 3, "train {}", d.train.len());
        for c in &d.report.overall.categories {
            let target = reference_category_targets()[&c.name] * 100.0;
            assert!((c.percent - target).abs() <= 2.0, "{} {} vs {}", c.name, c.percent, target);
        }
        assert_eq!(d.report.answer_sources.values().sum::<usize>(), 1000);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GenerationConfig { num_questions: 200, seed: 11, ..Default::default() };
        let (a, b) = (generate(&cfg), generate(&cfg));
        assert_eq!(to_jsonl(&a.train), to_jsonl(&b.train));
        assert_eq!(to_jsonl(&a.test), to_jsonl(&b.test));
        let c = generate(&GenerationConfig { seed: 12, ..cfg });
        assert_ne!(to_jsonl(&a.train), to_jsonl(&c.train));
    }

    #[test]
    fn no_usable_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = generate_dataset(&[scene_with_frames(&[1, 50])], &shipped_templates(), &GenerationConfig::default(), &mut rng, None)
            .unwrap_err();
        assert!(matches!(err, GenError::SceneTooSparse { .. }));
    }

    #[test]
    fn unknown_target_category() {
        let cfg = GenerationConfig {
            category_targets: Some([("9. Missing".to_string(), 1.0)].into()),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            generate_dataset(&demo_scenes(), &shipped_templates(), &cfg, &mut rng, None),
            Err(GenError::InvalidConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn generated_records_hold_invariants(seed in any::<u64>(), n in 1usize..120, gap in 1u32..25, frac in 0.1f64..0.9) {
            let cfg = GenerationConfig {
                num_questions: n, max_frame_gap: gap, split_train_fraction: frac, seed, ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = match generate_dataset(&demo_scenes(), &shipped_templates(), &cfg, &mut rng, None) {
                Ok(d) => d,
                Err(GenError::SceneTooSparse { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let all: Vec<_> = d.train.iter().chain(&d.test).collect();
            prop_assert_eq!(all.len(), n);
            for r in &all {
                let g = r.frame_gap();
                prop_assert!(g > 0 && g <= gap);
                let unresolved = r.question.contains(['{', '}']);
                prop_assert!(!unresolved, "unresolved placeholder in {:?}", r.question);
                if r.qtype == QuestionType::Mcq {
                    let o = r.options.as_ref().unwrap();
                    prop_assert_eq!(o.len(), 4);
                    prop_assert_eq!(o.values().filter(|v| normalize_answer(v) == normalize_answer(&r.answer)).count(), 1);
                }
            }
            // Per category, the train share is the rounded fraction.
            let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for r in &d.train { per.entry(&r.main_category).or_default().0 += 1; }
            for r in &d.test { per.entry(&r.main_category).or_default().1 += 1; }
            for (tr, te) in per.values() {
                let total = (tr + te) as f64;
                prop_assert!((*tr as f64 - total * frac).abs() <= 0.5 + 1e-9);
            }
        }
    }
}

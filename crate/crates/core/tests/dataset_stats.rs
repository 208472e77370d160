use panovqa::record::parse_jsonl;
use panovqa::vqa_gen::dataset_stats;

const FIXTURE: &str = include_str!("fixtures/stats_50.jsonl");

#[test]
fn fixture_matches_hand_count() {
    let records = parse_jsonl(FIXTURE).unwrap();
    for r in &records {
        r.validate(20).unwrap();
    }
    let s = dataset_stats(&records);
    assert_eq!(s.total, 50);
    assert_eq!((s.mcq.count, s.qa.count), (36, 14));
    assert!((s.mcq.percent - 72.0).abs() < 1e-9);

    let mains: Vec<(&str, usize, f64)> = s.categories.iter().map(|c| (c.name.as_str(), c.count, c.percent)).collect();
    let expected = [
        ("1. Basic Understanding", 10, 20.0),
        ("2. Image Characteristics", 11, 22.0),
        ("3. Perspective Question Design", 15, 30.0),
        ("4. Advanced Reasoning", 7, 14.0),
        ("5. Quantitative Reasoning", 7, 14.0),
    ];
    assert_eq!(mains.len(), expected.len());
    for ((name, count, pct), (en, ec, ep)) in mains.iter().zip(expected) {
        assert_eq!((*name, *count), (en, ec));
        assert!((pct - ep).abs() < 1e-9);
    }

    let subs: Vec<usize> = s.categories.iter().flat_map(|c| c.sub_categories.iter().map(|x| x.count)).collect();
    assert_eq!(subs, vec![4, 3, 3, 5, 4, 2, 3, 3, 4, 2, 3, 2, 2, 3, 2, 2, 3]);
    let size_judgment = &s.categories[2].sub_categories[3];
    assert_eq!(size_judgment.name, "3.4 Size Judgment");
    assert!((size_judgment.percent - 4.0).abs() < 1e-9);
}

#[test]
fn empty_input_is_all_zero() {
    let s = dataset_stats(&[]);
    assert_eq!((s.total, s.mcq.count, s.qa.count), (0, 0, 0));
    assert_eq!((s.mcq.percent, s.qa.percent), (0.0, 0.0));
    assert!(s.categories.is_empty());
}

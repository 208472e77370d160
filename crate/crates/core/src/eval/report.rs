//! Per-category score tables and their text, CSV and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, QuestionScore};
use crate::record::QuestionType;

/// Raw sums behind one table row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub mcq_count: usize,
    pub mcq_correct: usize,
    pub qa_count: usize,
    pub qa_similarity_sum: f64,
}

impl Tally {
    pub fn add(&mut self, qtype: QuestionType, score: f64) {
        match qtype {
            QuestionType::Mcq => {
                self.mcq_count += 1;
                if score >= 1.0 {
                    self.mcq_correct += 1;
                }
            }
            QuestionType::Qa => {
                self.qa_count += 1;
                self.qa_similarity_sum += score;
            }
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.mcq_count += other.mcq_count;
        self.mcq_correct += other.mcq_correct;
        self.qa_count += other.qa_count;
        self.qa_similarity_sum += other.qa_similarity_sum;
    }

    /// Percentage, absent without MCQ questions.
    pub fn mcq_accuracy(&self) -> Option<f64> {
        (self.mcq_count > 0).then(|| 100.0 * self.mcq_correct as f64 / self.mcq_count as f64)
    }

    /// Mean similarity, absent without QA questions.
    pub fn qa_similarity(&self) -> Option<f64> {
        (self.qa_count > 0).then(|| self.qa_similarity_sum / self.qa_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    #[serde(flatten)]
    pub tally: Tally,
    pub mcq_accuracy: Option<f64>,
    pub qa_similarity: Option<f64>,
}

impl ReportRow {
    fn new(name: impl Into<String>, tally: Tally) -> Self {
        Self { name: name.into(), mcq_accuracy: tally.mcq_accuracy(), qa_similarity: tally.qa_similarity(), tally }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRows {
    #[serde(flatten)]
    pub summary: ReportRow,
    pub sub_categories: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub overall: ReportRow,
    pub categories: Vec<CategoryRows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?} (expected text, csv or json)")),
        }
    }
}

const OVERALL: &str = "Overall Performance";
const CSV_HEADER: [&str; 9] = [
    "level",
    "main_category",
    "sub_category",
    "mcq_count",
    "mcq_correct",
    "mcq_accuracy",
    "qa_count",
    "qa_similarity_sum",
    "qa_similarity",
];

impl CategoryReport {
    /// Builds every row from sub-category tallies keyed by (main, sub).
    pub fn from_tallies(tallies: &BTreeMap<(String, String), Tally>) -> Self {
        let mut grouped: BTreeMap<&str, Vec<(&str, Tally)>> = BTreeMap::new();
        for ((main, sub), t) in tallies {
            grouped.entry(main).or_default().push((sub, *t));
        }
        let mut overall = Tally::default();
        let categories = grouped
            .into_iter()
            .map(|(main, subs)| {
                let mut total = Tally::default();
                for (_, t) in &subs {
                    total.merge(t);
                }
                overall.merge(&total);
                CategoryRows {
                    summary: ReportRow::new(main, total),
                    sub_categories: subs.into_iter().map(|(s, t)| ReportRow::new(s, t)).collect(),
                }
            })
            .collect();
        Self { overall: ReportRow::new(OVERALL, overall), categories }
    }

    pub fn from_scores(scores: &[QuestionScore]) -> Self {
        let mut tallies: BTreeMap<(String, String), Tally> = BTreeMap::new();
        for s in scores {
            tallies
                .entry((s.main_category.clone(), s.sub_category.clone()))
                .or_default()
                .add(s.qtype, s.score);
        }
        Self::from_tallies(&tallies)
    }

    fn sub_tallies(&self) -> BTreeMap<(String, String), Tally> {
        self.categories
            .iter()
            .flat_map(|c| c.sub_categories.iter().map(move |s| ((c.summary.name.clone(), s.name.clone()), s.tally)))
            .collect()
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a JSON report and recomputes aggregate rows from the
    /// sub-category tallies.
    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        let parsed: CategoryReport = serde_json::from_str(json).map_err(|e| EvalError::Report(e.to_string()))?;
        Ok(Self::from_tallies(&parsed.sub_tallies()))
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        let mut row = |level: &str, main: &str, sub: &str, r: &ReportRow| {
            let t = &r.tally;
            w.write_record([
                level,
                main,
                sub,
                &t.mcq_count.to_string(),
                &t.mcq_correct.to_string(),
                &opt(r.mcq_accuracy),
                &t.qa_count.to_string(),
                &t.qa_similarity_sum.to_string(),
                &opt(r.qa_similarity),
            ])
            .expect("in-memory write");
        };
        row("overall", "", "", &self.overall);
        for c in &self.categories {
            row("category", &c.summary.name, "", &c.summary);
            for s in &c.sub_categories {
                row("sub_category", &c.summary.name, &s.name, s);
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Parses CSV produced by [`CategoryReport::to_csv`]; aggregate rows are
    /// recomputed from the sub-category rows.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::Report(m);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut tallies = BTreeMap::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if &rec[0] != "sub_category" {
                continue;
            }
            let int = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[i])));
            let tally = Tally {
                mcq_count: int(3)?,
                mcq_correct: int(4)?,
                qa_count: int(6)?,
                qa_similarity_sum: rec[7].parse().map_err(|e| bad(format!("qa_similarity_sum: {e}")))?,
            };
            tallies.insert((rec[1].to_string(), rec[2].to_string()), tally);
        }
        Ok(Self::from_tallies(&tallies))
    }

    /// Table with one row per category and indented sub-category rows.
    /// Absent cells show `--`.
    pub fn to_text(&self) -> String {
        let mcq = |r: &ReportRow| r.mcq_accuracy.map_or("--".to_string(), |v| format!("{v:.2}%"));
        let qa = |r: &ReportRow| r.qa_similarity.map_or("--".to_string(), |v| format!("{v:.4}"));
        let width = self
            .categories
            .iter()
            .flat_map(|c| std::iter::once(c.summary.name.len()).chain(c.sub_categories.iter().map(|s| s.name.len() + 2)))
            .chain([OVERALL.len(), "Category / Sub-category".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let line = |out: &mut String, name: &str, a: &str, b: &str| {
            let _ = writeln!(out, "{name:<width$}  {a:>12}  {b:>13}");
        };
        let rule = "-".repeat(width + 29);
        line(&mut out, "Category / Sub-category", "MCQ Accuracy", "QA Similarity");
        let _ = writeln!(out, "{rule}");
        line(&mut out, OVERALL, &mcq(&self.overall), &qa(&self.overall));
        for c in &self.categories {
            let _ = writeln!(out, "{rule}");
            line(&mut out, &c.summary.name, &mcq(&c.summary), &qa(&c.summary));
            for s in &c.sub_categories {
                line(&mut out, &format!("  {}", s.name), &mcq(s), &qa(s));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tally(mcq: (usize, usize), qa: (usize, f64)) -> Tally {
        Tally { mcq_count: mcq.0, mcq_correct: mcq.1, qa_count: qa.0, qa_similarity_sum: qa.1 }
    }

    fn sample() -> CategoryReport {
        let mut t = BTreeMap::new();
        t.insert(("1. Basic".to_string(), "1.1 A".to_string()), tally((10, 6), (2, 1.7)));
        t.insert(("1. Basic".to_string(), "1.2 B".to_string()), tally((0, 0), (3, 2.1)));
        t.insert(("5. Quant".to_string(), "5.1 C".to_string()), tally((4, 1), (0, 0.0)));
        CategoryReport::from_tallies(&t)
    }

    #[test]
    fn absent_cells_and_formatting() {
        let r = sample();
        let text = r.to_text();
        let row = |name: &str| text.lines().find(|l| l.trim_start().starts_with(name)).unwrap().to_string();
        assert!(row("1.1 A").contains("60.00%"));
        assert!(row("1.1 A").contains("0.8500"));
        assert!(row("1.2 B").contains("--"));
        assert!(row("5.1 C").trim_end().ends_with("--"));
        assert!(row("Overall Performance").contains("50.00%"));
        assert_eq!(r.overall.qa_similarity, Some(3.8 / 5.0));
    }

    #[test]
    fn json_and_csv_round_trip() {
        let r = sample();
        let json = r.to_json();
        assert_eq!(CategoryReport::from_json(&json).unwrap().to_json(), json);
        let csv = r.to_csv();
        assert_eq!(CategoryReport::from_csv(&csv).unwrap().to_csv(), csv);
        assert_eq!(CategoryReport::from_csv(&csv).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["categories"][1]["qa_similarity"].is_null());
    }

    #[test]
    fn empty_report() {
        let r = CategoryReport::from_tallies(&BTreeMap::new());
        assert_eq!(r.overall.mcq_accuracy, None);
        assert!(r.to_text().contains("Overall Performance"));
        assert_eq!(CategoryReport::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn format_names() {
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("xml".parse::<ReportFormat>().is_err());
    }

    proptest! {
        #[test]
        fn overall_is_count_weighted(cells in proptest::collection::vec(
            (0u8..3, 0u8..3, 0usize..20, 0usize..20, 0usize..20, 0.0f64..1.0), 1..30)) {
            let mut t: BTreeMap<(String, String), Tally> = BTreeMap::new();
            for (m, s, mc, correct, qc, mean) in cells {
                let correct = correct.min(mc);
                t.insert((format!("{m}"), format!("{m}.{s}")), tally((mc, correct), (qc, mean * qc as f64)));
            }
            let r = CategoryReport::from_tallies(&t);
            let subs: Vec<&ReportRow> = r.categories.iter().flat_map(|c| &c.sub_categories).collect();
            let weighted = |rows: &[&ReportRow]| {
                let n: usize = rows.iter().map(|x| x.tally.qa_count).sum();
                let s: f64 = rows.iter().filter_map(|x| x.qa_similarity.map(|v| v * x.tally.qa_count as f64)).sum();
                let mn: usize = rows.iter().map(|x| x.tally.mcq_count).sum();
                let ms: f64 = rows.iter().filter_map(|x| x.mcq_accuracy.map(|v| v * x.tally.mcq_count as f64)).sum();
                ((n > 0).then(|| s / n as f64), (mn > 0).then(|| ms / mn as f64))
            };
            let cats: Vec<&ReportRow> = r.categories.iter().map(|c| &c.summary).collect();
            for (a, b) in [(weighted(&subs), weighted(&cats))] {
                for (x, y) in [(a.0, r.overall.qa_similarity), (b.0, r.overall.qa_similarity),
                               (a.1, r.overall.mcq_accuracy), (b.1, r.overall.mcq_accuracy)] {
                    match (x, y) {
                        (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0)),
                        (None, None) => {}
                        other => prop_assert!(false, "{other:?}"),
                    }
                }
            }
        }
    }
}

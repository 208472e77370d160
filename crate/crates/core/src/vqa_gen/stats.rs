//! Dataset composition: totals by question type, main category and
//! sub-category, each with a percentage of the whole.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::record::{QuestionRecord, QuestionType};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypeCount {
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCategoryStats {
    pub name: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub name: String,
    pub count: usize,
    pub percent: f64,
    pub sub_categories: Vec<SubCategoryStats>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub mcq: TypeCount,
    pub qa: TypeCount,
    /// Sorted by category name, sub-categories likewise.
    pub categories: Vec<CategoryStats>,
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn dataset_stats(records: &[QuestionRecord]) -> DatasetStats {
    let total = records.len();
    let mut tree: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut mcq = 0;
    for r in records {
        *tree.entry(&r.main_category).or_default().entry(&r.sub_category).or_default() += 1;
        if r.qtype == QuestionType::Mcq {
            mcq += 1;
        }
    }
    let categories = tree
        .into_iter()
        .map(|(name, subs)| {
            let count = subs.values().sum();
            CategoryStats {
                name: name.to_string(),
                count,
                percent: percent(count, total),
                sub_categories: subs
                    .into_iter()
                    .map(|(s, c)| SubCategoryStats { name: s.to_string(), count: c, percent: percent(c, total) })
                    .collect(),
            }
        })
        .collect();
    DatasetStats {
        total,
        mcq: TypeCount { count: mcq, percent: percent(mcq, total) },
        qa: TypeCount { count: total - mcq, percent: percent(total - mcq, total) },
        categories,
    }
}

/// Plain-text table: one line per category, sub-categories indented.
pub fn render_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Total {} | MCQ {} ({:.2}%) | QA {} ({:.2}%)",
        stats.total, stats.mcq.count, stats.mcq.percent, stats.qa.count, stats.qa.percent
    );
    for c in &stats.categories {
        let _ = writeln!(out, "{:<50} {:>6} {:>7.2}%", c.name, c.count, c.percent);
        for s in &c.sub_categories {
            let _ = writeln!(out, "  {:<48} {:>6} {:>7.2}%", s.name, s.count, s.percent);
        }
    }
    out
}

//! Exact Match scoring by line category and the repository-context boost.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::LineCategory;
use crate::pysurface::{declared_identifiers, referenced_identifiers};
use crate::tokenizer::FILE_SEP;

/// Run names whose difference is reported as the repository-context boost.
pub const PD_16K: &str = "PD-16K";
pub const FL_4K: &str = "FL-4K";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub example_id: String,
    #[serde(default)]
    pub context: String,
    pub file_prefix: String,
    pub ground_truth_line: String,
    /// Pre-assigned label; derived from identifiers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<LineCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub prediction: String,
}

/// First line of `prediction` holding a non-whitespace character, compared to
/// `truth` with trailing whitespace stripped from both.
pub fn exact_match(prediction: &str, truth: &str) -> bool {
    match prediction.lines().find(|l| !l.trim().is_empty()) {
        Some(line) => line.trim_end() == truth.trim_end(),
        None => false,
    }
}

/// `infile` if the line uses an identifier declared in the completion file,
/// else `inproject` if it uses one declared elsewhere in the repository.
pub fn categorize_line(line: &str, infile_ids: &BTreeSet<String>, project_ids: &BTreeSet<String>) -> LineCategory {
    let used = referenced_identifiers(line);
    if used.iter().any(|id| infile_ids.contains(id)) {
        LineCategory::Infile
    } else if used.iter().any(|id| project_ids.contains(id)) {
        LineCategory::Inproject
    } else {
        LineCategory::Other
    }
}

/// Identifiers declared by the `.py` files inside a formatted context.
pub fn context_identifiers(context: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for chunk in context.split(FILE_SEP) {
        let Some((header, body)) = chunk.split_once('\n') else {
            continue;
        };
        if header.strip_prefix("# ").is_some_and(|p| p.ends_with(".py")) {
            out.extend(declared_identifiers(body));
        }
    }
    out
}

pub fn item_category(item: &EvalItem) -> LineCategory {
    item.category.unwrap_or_else(|| {
        categorize_line(
            &item.ground_truth_line,
            &declared_identifiers(&item.file_prefix),
            &context_identifiers(&item.context),
        )
    })
}

/// `(x * 10).round() / 10`.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub run: String,
    pub category: LineCategory,
    pub matches: usize,
    pub total: usize,
    /// Percentage rounded to one decimal.
    pub exact_match: f64,
}

impl CategoryScore {
    pub fn new(run: &str, category: LineCategory, matches: usize, total: usize) -> Self {
        Self {
            run: run.to_string(),
            category,
            matches,
            total,
            exact_match: round1(100.0 * matches as f64 / total as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcbEntry {
    pub category: LineCategory,
    pub with_context: f64,
    pub file_level: f64,
    pub boost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<CategoryScore>,
    pub rcb: Vec<RcbEntry>,
    pub warnings: Vec<String>,
    pub notices: Vec<String>,
}

/// Boost of the `with_context` run over the `file_level` run per category
/// present in both, computed from the rounded percentages.
pub fn compute_rcb(scores: &[CategoryScore], with_context: &str, file_level: &str) -> Vec<RcbEntry> {
    let find = |run: &str, cat| scores.iter().find(|s| s.run == run && s.category == cat);
    let cats: BTreeSet<LineCategory> = scores.iter().map(|s| s.category).collect();
    cats.into_iter()
        .filter_map(|cat| {
            let pd = find(with_context, cat)?;
            let fl = find(file_level, cat)?;
            Some(RcbEntry {
                category: cat,
                with_context: pd.exact_match,
                file_level: fl.exact_match,
                boost: round1(pd.exact_match - fl.exact_match),
            })
        })
        .collect()
}

/// Scores every named run of predictions against the same items. Only
/// categories in `categories` are reported (all when `None`).
pub fn evaluate(
    items: &[EvalItem],
    runs: &[(String, HashMap<String, String>)],
    categories: Option<&BTreeSet<LineCategory>>,
) -> EvalReport {
    let labels: Vec<LineCategory> = items.par_iter().map(item_category).collect();
    let wanted = |c: &LineCategory| categories.is_none_or(|set| set.contains(c));
    let mut report = EvalReport::default();

    for (run, preds) in runs {
        let outcomes: Vec<Option<bool>> = items
            .par_iter()
            .map(|it| preds.get(&it.example_id).map(|p| exact_match(p, &it.ground_truth_line)))
            .collect();
        let mut tally: BTreeMap<LineCategory, (usize, usize)> = BTreeMap::new();
        for ((item, cat), outcome) in items.iter().zip(&labels).zip(&outcomes) {
            if !wanted(cat) {
                continue;
            }
            let entry = tally.entry(*cat).or_default();
            entry.1 += 1;
            match outcome {
                Some(true) => entry.0 += 1,
                Some(false) => {}
                None => report
                    .warnings
                    .push(format!("run {run}: no prediction for {}; counted as a mismatch", item.example_id)),
            }
        }
        for cat in [LineCategory::Infile, LineCategory::Inproject, LineCategory::Other] {
            if !wanted(&cat) {
                continue;
            }
            match tally.get(&cat) {
                Some(&(m, n)) => report.scores.push(CategoryScore::new(run, cat, m, n)),
                None => report.notices.push(format!("run {run}: category {cat} has no items; omitted")),
            }
        }
    }
    report.rcb = compute_rcb(&report.scores, PD_16K, FL_4K);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn item(id: &str, truth: &str, cat: LineCategory) -> EvalItem {
        EvalItem {
            example_id: id.into(),
            context: String::new(),
            file_prefix: String::new(),
            ground_truth_line: truth.into(),
            category: Some(cat),
        }
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match("return x\n", "return x"));
        assert!(exact_match("return x  \n", "return x"));
        assert!(!exact_match("\n\nreturn x\n", "return y"));
        assert!(exact_match("\n  \n    return x\nmore", "    return x"));
        assert!(!exact_match(" \n\t\n", ""));
        assert!(!exact_match("  return x", "return x"));
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(categorize_line("x = helper()", &ids(&["helper"]), &ids(&[])), LineCategory::Infile);
        assert_eq!(
            categorize_line("cfg = load_config()", &ids(&["other"]), &ids(&["load_config"])),
            LineCategory::Inproject
        );
        assert_eq!(categorize_line("return 1", &ids(&["x"]), &ids(&["y"])), LineCategory::Other);
        assert_eq!(categorize_line("a = f(g)", &ids(&["f"]), &ids(&["g"])), LineCategory::Infile);
    }

    #[test]
    fn derived_categories_use_prefix_and_context() {
        let mut it = item("e", "cfg = load_config()", LineCategory::Other);
        it.category = None;
        it.context = "<file_sep># conf.py\ndef load_config():\n    pass\n<file_sep># n.md\ndef nope(): pass\n".into();
        assert_eq!(item_category(&it), LineCategory::Inproject);
        it.file_prefix = "cfg = None\n".into();
        assert_eq!(item_category(&it), LineCategory::Infile);
        it.ground_truth_line = "nope()".into();
        assert_eq!(item_category(&it), LineCategory::Other);
    }

    #[test]
    fn one_of_four_is_25() {
        let items: Vec<EvalItem> = (0..4).map(|i| item(&format!("e{i}"), "pass", LineCategory::Inproject)).collect();
        let preds: HashMap<String, String> = (0..4)
            .map(|i| (format!("e{i}"), if i == 0 { "pass" } else { "return" }.to_string()))
            .collect();
        let report = evaluate(&items, &[("run".into(), preds)], None);
        assert_eq!(report.scores.len(), 1);
        assert_eq!(report.scores[0].exact_match, 25.0);
        assert_eq!(report.notices.len(), 2);
    }

    #[test]
    fn missing_predictions_warn_and_mismatch() {
        let items = vec![item("a", "x", LineCategory::Infile), item("b", "y", LineCategory::Infile)];
        let preds = HashMap::from([("a".to_string(), "x".to_string())]);
        let report = evaluate(&items, &[("r".into(), preds)], Some(&BTreeSet::from([LineCategory::Infile])));
        assert_eq!(report.scores[0].exact_match, 50.0);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn rcb_from_two_runs() {
        let scores = vec![
            CategoryScore { run: FL_4K.into(), category: LineCategory::Inproject, matches: 0, total: 1, exact_match: 26.2 },
            CategoryScore { run: PD_16K.into(), category: LineCategory::Inproject, matches: 0, total: 1, exact_match: 48.8 },
        ];
        let rcb = compute_rcb(&scores, PD_16K, FL_4K);
        assert_eq!(rcb.len(), 1);
        assert_eq!(rcb[0].boost, 22.6);
    }

    #[test]
    fn union_is_count_weighted() {
        let a: Vec<EvalItem> = (0..3).map(|i| item(&format!("a{i}"), "x", LineCategory::Other)).collect();
        let b: Vec<EvalItem> = (0..5).map(|i| item(&format!("b{i}"), "x", LineCategory::Other)).collect();
        let preds: HashMap<String, String> = a.iter().take(1).chain(b.iter().take(4)).map(|i| (i.example_id.clone(), "x".into())).collect();
        let all: Vec<EvalItem> = a.iter().chain(&b).cloned().collect();
        let r = evaluate(&all, &[("r".into(), preds)], None);
        let s = r.scores.iter().find(|s| s.category == LineCategory::Other).unwrap();
        assert_eq!((s.matches, s.total), (5, 8));
        assert_eq!(s.exact_match, 62.5);
    }
}

use std::borrow::Cow;

use crate::model::FileEntry;
use crate::relevance::RankedFiles;
use crate::tokenizer::{left_truncate_text, Tokenizer, FILE_SEP};

/// Token budget for one composed context.
#[derive(Clone, Copy)]
pub struct ContextBudget<'t> {
    pub max_context_tokens: usize,
    pub tokenizer: &'t dyn Tokenizer,
}

impl<'t> ContextBudget<'t> {
    pub fn new(max_context_tokens: usize, tokenizer: &'t dyn Tokenizer) -> Self {
        Self {
            max_context_tokens,
            tokenizer,
        }
    }
}

/// `<file_sep># {path}\n{content}`
pub fn format_file(entry: &FileEntry) -> String {
    format_parts(&entry.path, &entry.content)
}

pub(crate) fn format_parts(path: &str, content: &str) -> String {
    let mut out = String::with_capacity(FILE_SEP.len() + path.len() + content.len() + 3);
    out.push_str(FILE_SEP);
    out.push_str("# ");
    out.push_str(path);
    out.push('\n');
    out.push_str(content);
    out
}

/// Formatted files selected under a budget, least relevant first. The first
/// part may be a token-level suffix of a file that did not fit whole.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FittedContext {
    pub parts: Vec<String>,
    pub paths: Vec<String>,
    pub tokens: usize,
    pub truncated: bool,
}

impl FittedContext {
    pub fn concat(&self) -> String {
        self.parts.concat()
    }

    pub fn reverse(&mut self) {
        self.parts.reverse();
        self.paths.reverse();
    }
}

/// Per-file content rewrite applied before fitting.
pub type Transform<'f> = dyn FnMut(&str) -> String + 'f;

/// Walks candidates from most to least relevant, taking whole files while they
/// fit and a left-truncated suffix of the first one that does not.
pub fn fit_files(ranked: &RankedFiles<'_>, budget: &ContextBudget<'_>, mut transform: Option<&mut Transform<'_>>) -> FittedContext {
    let tok = budget.tokenizer;
    let mut remaining = budget.max_context_tokens;
    let mut fitted = FittedContext::default();
    for file in ranked.files.iter().rev() {
        if remaining == 0 {
            break;
        }
        let content = match transform.as_mut() {
            Some(t) => Cow::Owned(t(&file.content)),
            None => Cow::Borrowed(file.content.as_str()),
        };
        if content.trim().is_empty() {
            continue;
        }
        let text = format_parts(&file.path, &content);
        let n = tok.count(&text);
        if n <= remaining {
            remaining -= n;
            fitted.tokens += n;
            fitted.parts.push(text);
            fitted.paths.push(file.path.clone());
        } else {
            let (suffix, used) = left_truncate_text(tok, &text, remaining);
            fitted.tokens += used;
            fitted.truncated = true;
            if used > 0 {
                fitted.parts.push(suffix);
                fitted.paths.push(file.path.clone());
            }
            break;
        }
    }
    fitted.reverse();
    fitted
}

/// Concatenated context for `ranked` under `budget`, most relevant file last.
pub fn fit_and_concat(ranked: &RankedFiles<'_>, budget: &ContextBudget<'_>, transform: Option<&mut Transform<'_>>) -> String {
    fit_files(ranked, budget, transform).concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::ByteTokenizer;

    fn ranked(files: &[FileEntry]) -> RankedFiles<'_> {
        RankedFiles {
            files: files.iter().collect(),
            scores: vec![(0.0, 0.0); files.len()],
        }
    }

    #[test]
    fn format_matches_file_representation() {
        assert_eq!(format_file(&FileEntry::new("a.py", "x=1\n")), "<file_sep># a.py\nx=1\n");
    }

    #[test]
    fn format_is_injective_on_sample() {
        let samples = [("a.py", "x\n"), ("a.py", "y\n"), ("b.py", "x\n"), ("a.p", "y\nx\n")];
        let out: std::collections::HashSet<String> =
            samples.iter().map(|(p, c)| format_file(&FileEntry::new(*p, *c))).collect();
        assert_eq!(out.len(), samples.len());
    }

    #[test]
    fn large_budget_takes_everything_in_order() {
        let files = vec![FileEntry::new("far.py", "1\n"), FileEntry::new("near.py", "2\n")];
        let budget = ContextBudget::new(10_000, &ByteTokenizer);
        let ctx = fit_and_concat(&ranked(&files), &budget, None);
        assert_eq!(ctx, "<file_sep># far.py\n1\n<file_sep># near.py\n2\n");
    }

    #[test]
    fn oversized_most_relevant_file_is_left_truncated() {
        // Formatted: 1 + "# a.py\n" (7) + 17 bytes = 25 tokens.
        let files = vec![FileEntry::new("a.py", "abcdefghijklmnopq")];
        let text = format_file(&files[0]);
        assert_eq!(ByteTokenizer.count(&text), 25);
        let budget = ContextBudget::new(10, &ByteTokenizer);
        let ctx = fit_and_concat(&ranked(&files), &budget, None);
        assert_eq!(ctx, "hijklmnopq");
        assert_eq!(ctx, &text[text.len() - 10..]);
    }

    #[test]
    fn exact_budget_includes_all_without_partial() {
        let files = vec![FileEntry::new("a.py", "aa\n"), FileEntry::new("b.py", "bbb\n")];
        let total: usize = files.iter().map(|f| ByteTokenizer.count(&format_file(f))).sum();
        let budget = ContextBudget::new(total, &ByteTokenizer);
        let fitted = fit_files(&ranked(&files), &budget, None);
        assert!(!fitted.truncated);
        assert_eq!(fitted.paths, vec!["a.py", "b.py"]);
        assert_eq!(fitted.tokens, total);

        let budget = ContextBudget::new(total - 1, &ByteTokenizer);
        let fitted = fit_files(&ranked(&files), &budget, None);
        assert!(fitted.truncated);
        assert_eq!(fitted.tokens, total - 1);
    }

    #[test]
    fn zero_budget_is_empty() {
        let files = vec![FileEntry::new("a.py", "x")];
        let budget = ContextBudget::new(0, &ByteTokenizer);
        assert_eq!(fit_and_concat(&ranked(&files), &budget, None), "");
    }

    #[test]
    fn transform_can_drop_files() {
        let files = vec![FileEntry::new("a.py", "keep\n"), FileEntry::new("b.py", "# drop\n")];
        let budget = ContextBudget::new(1000, &ByteTokenizer);
        let mut t = |c: &str| crate::pysurface::strip_to_code(c);
        let fitted = fit_files(&ranked(&files), &budget, Some(&mut t));
        assert_eq!(fitted.paths, vec!["a.py"]);
    }
}

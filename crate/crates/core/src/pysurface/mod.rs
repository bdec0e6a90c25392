//! Content transforms over Python source used by the Code Chunks,
//! Declarations and Text Chunks composers, plus identifier extraction for
//! line categorization.

mod lexer;

use std::collections::BTreeSet;

pub use lexer::{lex_python, LexUnit, UnitKind};

use lexer::{scan, span_text, unit_spans, Scan};

/// Physical line numbers (1-based) routed to each transform output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinePartition {
    pub code: Vec<usize>,
    pub text: Vec<usize>,
    pub import: Vec<usize>,
}

/// Code lines with provenance, before blank-line collapsing.
fn code_lines<'a>(scan: &Scan<'a>) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (kind, first, last) in unit_spans(scan) {
        match kind {
            UnitKind::Code | UnitKind::DeclarationHeader => {
                for idx in first..=last {
                    let line = &scan.lines[idx];
                    if line.comment_at.is_some() {
                        let mut code = line.code_part().trim_end().to_string();
                        if code.trim().is_empty() {
                            continue;
                        }
                        // Keep a dangling backslash from turning into a continuation.
                        if code.ends_with('\\') {
                            code.push(' ');
                        }
                        out.push((idx, code));
                    } else {
                        out.push((idx, line.text.to_string()));
                    }
                }
            }
            UnitKind::Blank => out.push((first, String::new())),
            _ => {}
        }
    }
    out
}

fn join_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}

/// Removes docstrings, comments (including trailing ones) and imports.
/// Runs of blank lines collapse to one; leading and trailing blanks are dropped.
pub fn strip_to_code(content: &str) -> String {
    let scan = scan(content);
    let lines = code_lines(&scan);
    let mut kept: Vec<&str> = Vec::with_capacity(lines.len());
    for (_, l) in &lines {
        let blank = l.trim().is_empty();
        if blank && kept.last().is_none_or(|p| p.trim().is_empty()) {
            continue;
        }
        kept.push(if blank { "" } else { l.as_str() });
    }
    while kept.last().is_some_and(|l| l.is_empty()) {
        kept.pop();
    }
    join_lines(kept)
}

/// Keeps only `def`/`async def`/`class` headers, including multi-line
/// signatures up to the terminating colon. Decorators and bodies are dropped.
pub fn extract_declarations(content: &str) -> String {
    let scan = scan(content);
    let mut out = String::new();
    for (kind, first, last) in unit_spans(&scan) {
        if kind == UnitKind::DeclarationHeader {
            push_unit(&mut out, &span_text(&scan, first, last));
        }
    }
    out
}

/// Keeps comment and docstring units only, in file order.
pub fn extract_text_chunks(content: &str) -> String {
    let scan = scan(content);
    let mut out = String::new();
    for (kind, first, last) in unit_spans(&scan) {
        if matches!(kind, UnitKind::Comment | UnitKind::Docstring) {
            push_unit(&mut out, &span_text(&scan, first, last));
        }
    }
    out
}

fn push_unit(out: &mut String, text: &str) {
    out.push_str(text);
    if !text.ends_with('\n') {
        out.push('\n');
    }
}

/// Which transform each non-blank source line ends up in.
pub fn partition_lines(content: &str) -> LinePartition {
    let scan = scan(content);
    let mut part = LinePartition {
        code: code_lines(&scan)
            .into_iter()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(idx, _)| idx + 1)
            .collect(),
        ..Default::default()
    };
    for (kind, first, last) in unit_spans(&scan) {
        let target = match kind {
            UnitKind::Comment | UnitKind::Docstring => &mut part.text,
            UnitKind::Import => &mut part.import,
            _ => continue,
        };
        target.extend(
            (first..=last)
                .filter(|&i| !scan.lines[i].text.trim().is_empty())
                .map(|i| i + 1),
        );
    }
    part
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_alphabetic())
        && chars.all(|c| c == '_' || c.is_alphanumeric())
}

/// Splits `text` at top-level plain `=` signs (outside brackets and strings,
/// excluding comparison and augmented operators).
fn assignment_parts(text: &str) -> Vec<&str> {
    let b = text.as_bytes();
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut start = 0;
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if let Some(q) = quote {
            if c == b'\\' {
                i += 1;
            } else if c == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        match c {
            b'\'' | b'"' => quote = Some(c),
            b'#' => break,
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth = depth.saturating_sub(1),
            b'=' if depth == 0 => {
                let prev = if i > 0 { b[i - 1] } else { 0 };
                let next = b.get(i + 1).copied().unwrap_or(0);
                let operator = b"=!<>:+-*/%&|^@".contains(&prev) || next == b'=';
                if operator {
                    if next == b'=' {
                        i += 1;
                    }
                } else {
                    parts.push(&text[start..i]);
                    start = i + 1;
                }
            }
            _ => {}
        }
        i += 1;
    }
    parts
}

fn target_names(target: &str, out: &mut BTreeSet<String>) {
    let target = target.trim();
    // Annotated assignment: `x: int = ...`.
    let target = match target.split_once(':') {
        Some((name, _)) if is_identifier(name.trim()) => name.trim(),
        _ => target,
    };
    let target = target
        .trim_start_matches(['(', '['])
        .trim_end_matches([')', ']'])
        .trim();
    for part in target.split(',') {
        let name = part.trim().trim_start_matches('*').trim();
        if is_identifier(name) && !is_keyword(name) {
            out.insert(name.to_string());
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "False" | "None" | "True" | "and" | "as" | "assert" | "async" | "await" | "break"
            | "class" | "continue" | "def" | "del" | "elif" | "else" | "except" | "finally"
            | "for" | "from" | "global" | "if" | "import" | "in" | "is" | "lambda"
            | "nonlocal" | "not" | "or" | "pass" | "raise" | "return" | "try" | "while"
            | "with" | "yield"
    )
}

/// Names bound by `def`, `class` (at any depth) and module-level assignments.
pub fn declared_identifiers(content: &str) -> BTreeSet<String> {
    let scan = scan(content);
    let mut out = BTreeSet::new();
    for logical in &scan.logicals {
        match logical.kind {
            UnitKind::DeclarationHeader => {
                if let Some(name) = &logical.name {
                    out.insert(name.clone());
                }
            }
            UnitKind::Code => {
                let head = scan.lines[logical.first].text;
                if head.starts_with([' ', '\t']) {
                    continue;
                }
                let text: String = (logical.first..=logical.last)
                    .map(|i| scan.lines[i].code_part())
                    .collect::<Vec<_>>()
                    .join("\n");
                for target in assignment_parts(&text) {
                    target_names(target, &mut out);
                }
            }
            _ => {}
        }
    }
    out
}

/// Identifier tokens used on a single line, ignoring strings and comments.
pub fn referenced_identifiers(line: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut quote: Option<char> = None;
    let mut current = String::new();
    let mut chars = line.chars().peekable();
    let flush = |current: &mut String, out: &mut BTreeSet<String>| {
        if is_identifier(current) && !is_keyword(current) {
            out.insert(std::mem::take(current));
        } else {
            current.clear();
        }
    };
    while let Some(c) = chars.next() {
        if let Some(q) = quote {
            if c == '\\' {
                chars.next();
            } else if c == q {
                quote = None;
            }
            continue;
        }
        if c == '_' || c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        flush(&mut current, &mut out);
        match c {
            '#' => break,
            '\'' | '"' => quote = Some(c),
            _ => {}
        }
    }
    flush(&mut current, &mut out);
    out
}

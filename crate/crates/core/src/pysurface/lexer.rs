//! Line-oriented Python lexer.
//!
//! The scanner tracks string literals (including triple-quoted ones spanning
//! lines), bracket depth and backslash continuations, which is enough to find
//! comments and logical-line boundaries without building a syntax tree. It
//! never fails: broken input degrades to `code` units.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Code,
    Comment,
    Docstring,
    Import,
    DeclarationHeader,
    Blank,
}

/// A run of physical lines sharing one classification. Spans are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexUnit {
    pub kind: UnitKind,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone)]
pub(crate) struct PhysLine<'a> {
    /// Line text without its terminating LF.
    pub text: &'a str,
    pub has_newline: bool,
    /// Byte offset (within `text`) of a `#` that opens a comment.
    pub comment_at: Option<usize>,
    pub starts_in_string: bool,
}

impl PhysLine<'_> {
    /// Holds nothing but (indentation and) a comment.
    pub fn is_comment_only(&self) -> bool {
        !self.starts_in_string
            && self
                .comment_at
                .is_some_and(|c| self.text[..c].trim().is_empty())
    }

    /// Text with any trailing comment cut off.
    pub fn code_part(&self) -> &str {
        match self.comment_at {
            Some(c) => &self.text[..c],
            None => self.text,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Logical {
    pub first: usize,
    pub last: usize,
    pub kind: UnitKind,
    pub name: Option<String>,
}

#[derive(Debug)]
pub(crate) struct Scan<'a> {
    pub lines: Vec<PhysLine<'a>>,
    pub logicals: Vec<Logical>,
}

#[derive(Debug, Default)]
struct Builder {
    first: usize,
    tokens: usize,
    first_word: Option<String>,
    second_word: Option<String>,
    third_word: Option<String>,
    starts_with_string: bool,
    doc_prefix_ok: bool,
    only_strings: bool,
}

impl Builder {
    fn new(first: usize) -> Self {
        Self {
            first,
            only_strings: true,
            ..Default::default()
        }
    }

    fn word(&mut self, w: &str) {
        match self.tokens {
            0 => self.first_word = Some(w.to_string()),
            1 => self.second_word = Some(w.to_string()),
            2 => self.third_word = Some(w.to_string()),
            _ => {}
        }
        self.tokens += 1;
        self.only_strings = false;
    }

    fn string(&mut self, prefix: &str) {
        if self.tokens == 0 {
            self.starts_with_string = true;
            self.doc_prefix_ok = prefix.chars().all(|c| matches!(c, 'r' | 'R' | 'u' | 'U'));
        }
        self.tokens += 1;
    }

    fn other(&mut self) {
        self.tokens += 1;
        self.only_strings = false;
    }

    fn finish(self, last: usize, unterminated: bool) -> Logical {
        let (kind, name) = if unterminated {
            (UnitKind::Code, None)
        } else if self.starts_with_string && self.only_strings && self.doc_prefix_ok {
            (UnitKind::Docstring, None)
        } else {
            match self.first_word.as_deref() {
                Some("import") | Some("from") => (UnitKind::Import, None),
                Some("def") | Some("class") => (UnitKind::DeclarationHeader, self.second_word),
                Some("async") if self.second_word.as_deref() == Some("def") => {
                    (UnitKind::DeclarationHeader, self.third_word)
                }
                _ => (UnitKind::Code, None),
            }
        };
        Logical {
            first: self.first,
            last,
            kind,
            name,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StrState {
    quote: u8,
    triple: bool,
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c >= 0x80
}

fn is_ident_continue(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c >= 0x80
}

fn is_string_prefix(word: &str) -> bool {
    word.len() <= 2
        && word
            .chars()
            .all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'u' | 'b' | 'f'))
}

pub(crate) fn scan(content: &str) -> Scan<'_> {
    let mut lines: Vec<PhysLine<'_>> = content
        .split_inclusive('\n')
        .map(|l| {
            let has_newline = l.ends_with('\n');
            PhysLine {
                text: l.strip_suffix('\n').unwrap_or(l),
                has_newline,
                comment_at: None,
                starts_in_string: false,
            }
        })
        .collect();

    let b = content.as_bytes();
    let n = b.len();
    let mut logicals = Vec::new();
    let mut open: Option<Builder> = None;
    let mut string: Option<StrState> = None;
    let mut depth = 0usize;
    let mut continuation = false;
    let mut line = 0usize;
    let mut line_start = 0usize;
    let mut i = 0usize;

    // Advances to the next physical line; `in_string` marks whether it opens inside a literal.
    macro_rules! next_line {
        ($in_string:expr) => {{
            line += 1;
            line_start = i + 1;
            if let Some(l) = lines.get_mut(line) {
                l.starts_in_string = $in_string;
            }
        }};
    }

    while i < n {
        let c = b[i];
        if let Some(st) = string {
            match c {
                b'\\' => {
                    if i + 1 < n && b[i + 1] == b'\n' {
                        i += 1;
                        next_line!(true);
                        i += 1;
                    } else {
                        i += 2;
                    }
                }
                b'\n' => {
                    if st.triple {
                        next_line!(true);
                    } else {
                        // Unterminated single-quoted literal: close it at end of line.
                        string = None;
                        if !continuation && depth == 0 {
                            if let Some(bld) = open.take() {
                                logicals.push(bld.finish(line, false));
                            }
                        }
                        continuation = false;
                        next_line!(false);
                    }
                    i += 1;
                }
                q if q == st.quote => {
                    if !st.triple {
                        string = None;
                        i += 1;
                    } else if i + 2 < n && b[i + 1] == q && b[i + 2] == q {
                        string = None;
                        i += 3;
                    } else {
                        i += 1;
                    }
                }
                _ => i += 1,
            }
            continue;
        }

        match c {
            b'#' => {
                if let Some(l) = lines.get_mut(line) {
                    l.comment_at = Some(i - line_start);
                }
                while i < n && b[i] != b'\n' {
                    i += 1;
                }
            }
            b'\n' => {
                if continuation {
                    continuation = false;
                } else if depth == 0 {
                    if let Some(bld) = open.take() {
                        logicals.push(bld.finish(line, false));
                    }
                }
                next_line!(false);
                i += 1;
            }
            b'\\' if i + 1 < n && b[i + 1] == b'\n' => {
                continuation = open.is_some();
                i += 1;
            }
            b' ' | b'\t' | b'\x0c' | b'\r' => i += 1,
            b'"' | b'\'' => {
                open.get_or_insert_with(|| Builder::new(line)).string("");
                string = Some(start_string(b, i));
                i += if string.unwrap().triple { 3 } else { 1 };
            }
            c if is_ident_start(c) => {
                let mut j = i + 1;
                while j < n && is_ident_continue(b[j]) {
                    j += 1;
                }
                let word = &content[i..j];
                let bld = open.get_or_insert_with(|| Builder::new(line));
                if j < n && (b[j] == b'"' || b[j] == b'\'') && is_string_prefix(word) {
                    bld.string(word);
                    string = Some(start_string(b, j));
                    i = j + if string.unwrap().triple { 3 } else { 1 };
                } else {
                    bld.word(word);
                    i = j;
                }
            }
            b'(' | b'[' | b'{' => {
                open.get_or_insert_with(|| Builder::new(line)).other();
                depth += 1;
                i += 1;
            }
            b')' | b']' | b'}' => {
                open.get_or_insert_with(|| Builder::new(line)).other();
                depth = depth.saturating_sub(1);
                i += 1;
            }
            _ => {
                open.get_or_insert_with(|| Builder::new(line)).other();
                i += 1;
            }
        }
    }

    if let Some(bld) = open.take() {
        let unterminated = string.is_some_and(|s| s.triple);
        let last = lines.len().saturating_sub(1).max(bld.first);
        logicals.push(bld.finish(last, unterminated));
    }

    Scan { lines, logicals }
}

fn start_string(b: &[u8], i: usize) -> StrState {
    let q = b[i];
    let triple = i + 2 < b.len() && b[i + 1] == q && b[i + 2] == q;
    StrState { quote: q, triple }
}

/// Owner of each physical line: `Some(logical index)` or `None` for standalone
/// blank/comment lines.
pub(crate) fn line_owners(scan: &Scan<'_>) -> Vec<Option<usize>> {
    let mut owners = vec![None; scan.lines.len()];
    for (idx, l) in scan.logicals.iter().enumerate() {
        for o in owners.iter_mut().take(l.last + 1).skip(l.first) {
            *o = Some(idx);
        }
    }
    owners
}

/// `(kind, first, last)` spans (0-based, inclusive) partitioning the lines.
pub(crate) fn unit_spans(scan: &Scan<'_>) -> Vec<(UnitKind, usize, usize)> {
    let owners = line_owners(scan);
    let mut spans: Vec<(UnitKind, usize, usize)> = Vec::new();
    let mut last_owner: Option<usize> = None;
    for (idx, line) in scan.lines.iter().enumerate() {
        match owners[idx] {
            None => {
                let kind = if line.is_comment_only() {
                    UnitKind::Comment
                } else {
                    UnitKind::Blank
                };
                spans.push((kind, idx, idx));
                last_owner = None;
            }
            Some(l) => {
                let logical = &scan.logicals[l];
                if idx != logical.first && line.is_comment_only() {
                    spans.push((UnitKind::Comment, idx, idx));
                    last_owner = None;
                } else if last_owner == Some(l) {
                    spans.last_mut().expect("open span").2 = idx;
                } else {
                    spans.push((logical.kind, idx, idx));
                    last_owner = Some(l);
                }
            }
        }
    }
    spans
}

pub(crate) fn span_text(scan: &Scan<'_>, first: usize, last: usize) -> String {
    let mut text = String::new();
    for l in &scan.lines[first..=last] {
        text.push_str(l.text);
        if l.has_newline {
            text.push('\n');
        }
    }
    text
}

/// Classifies every line of `content` into lexical units.
pub fn lex_python(content: &str) -> Vec<LexUnit> {
    let scan = scan(content);
    unit_spans(&scan)
        .into_iter()
        .map(|(kind, first, last)| LexUnit {
            kind,
            start: first + 1,
            end: last + 1,
            text: span_text(&scan, first, last),
        })
        .collect()
}

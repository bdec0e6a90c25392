//! Shared domain types and the preprocessing every composer relies on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// One file of a repository: a normalized relative path and LF-only text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub content: String,
}

impl FileEntry {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            content: content.into(),
        }
    }

    /// Builds an entry from raw bytes, normalizing both path and line separators.
    pub fn from_bytes(path: &str, content: Vec<u8>) -> Result<Self, FileError> {
        let path = normalize_path(path).map_err(|reason| FileError {
            path: path.to_string(),
            reason,
        })?;
        let content = String::from_utf8(content).map_err(|e| FileError {
            path: path.clone(),
            reason: format!("invalid UTF-8 at byte {}", e.utf8_error().valid_up_to()),
        })?;
        Ok(Self {
            content: normalize_line_endings(&content),
            path,
        })
    }

    /// Final path segment.
    pub fn file_name(&self) -> &str {
        file_name(&self.path)
    }

    pub fn is_python(&self) -> bool {
        self.path.ends_with(".py")
    }

    pub fn char_len(&self) -> usize {
        self.content.chars().count()
    }
}

/// A file that could not be ingested. The rest of the snapshot is kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for FileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

/// All code and text files of a repository immediately before a commit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepositorySnapshot {
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub files: Vec<FileEntry>,
}

impl RepositorySnapshot {
    pub fn key(&self) -> String {
        snapshot_key(&self.repo, &self.commit)
    }
}

pub fn snapshot_key(repo: &str, commit: &str) -> String {
    format!("{repo}@{commit}")
}

/// A `.py` file added in a commit, on which next-line completion is performed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionTarget {
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub file: FileEntry,
}

impl CompletionTarget {
    /// Stable per-dataset key: `repo@commit:path`.
    pub fn example_id(&self) -> String {
        format!("{}@{}:{}", self.repo, self.commit, self.file.path)
    }
}

/// One (context, completion) pair produced by a composer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedExample {
    pub example_id: String,
    pub repo: String,
    pub commit: String,
    pub composer: String,
    pub modifier: Modifier,
    /// Concrete composer picked by `mixed`; absent for every other kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_composer: Option<ComposerKind>,
    pub completion_path: String,
    pub context: String,
    /// The completion file in `<file_sep># path\n` representation.
    pub completion: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposerKind {
    FileLevel,
    PathDistancePy,
    LinesIouPy,
    CodeChunks,
    HalfMemoryPy,
    DeclarationsPy,
    TextChunksPy,
    TextFiles,
    RandomFiles,
    RandomPy,
    Mixed,
    RandomTokens,
    Duplication,
    Leak,
    MaskedLeak,
}

impl ComposerKind {
    pub const ALL: [ComposerKind; 15] = [
        ComposerKind::FileLevel,
        ComposerKind::PathDistancePy,
        ComposerKind::LinesIouPy,
        ComposerKind::CodeChunks,
        ComposerKind::HalfMemoryPy,
        ComposerKind::DeclarationsPy,
        ComposerKind::TextChunksPy,
        ComposerKind::TextFiles,
        ComposerKind::RandomFiles,
        ComposerKind::RandomPy,
        ComposerKind::Mixed,
        ComposerKind::RandomTokens,
        ComposerKind::Duplication,
        ComposerKind::Leak,
        ComposerKind::MaskedLeak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComposerKind::FileLevel => "file_level",
            ComposerKind::PathDistancePy => "path_distance_py",
            ComposerKind::LinesIouPy => "lines_iou_py",
            ComposerKind::CodeChunks => "code_chunks",
            ComposerKind::HalfMemoryPy => "half_memory_py",
            ComposerKind::DeclarationsPy => "declarations_py",
            ComposerKind::TextChunksPy => "text_chunks_py",
            ComposerKind::TextFiles => "text_files",
            ComposerKind::RandomFiles => "random_files",
            ComposerKind::RandomPy => "random_py",
            ComposerKind::Mixed => "mixed",
            ComposerKind::RandomTokens => "random_tokens",
            ComposerKind::Duplication => "duplication",
            ComposerKind::Leak => "leak",
            ComposerKind::MaskedLeak => "masked_leak",
        }
    }

    /// Kinds whose file order comes from a deterministic relevance ranking,
    /// and therefore accept the `reversed` and `irrelevant` modifiers.
    pub fn accepts_modifiers(self) -> bool {
        matches!(
            self,
            ComposerKind::PathDistancePy
                | ComposerKind::LinesIouPy
                | ComposerKind::CodeChunks
                | ComposerKind::HalfMemoryPy
                | ComposerKind::DeclarationsPy
                | ComposerKind::TextChunksPy
                | ComposerKind::TextFiles
                | ComposerKind::Leak
                | ComposerKind::MaskedLeak
        )
    }

    /// Kinds that may only ever see `.py` snapshot content.
    pub fn is_python_only(self) -> bool {
        matches!(
            self,
            ComposerKind::PathDistancePy
                | ComposerKind::LinesIouPy
                | ComposerKind::CodeChunks
                | ComposerKind::HalfMemoryPy
                | ComposerKind::DeclarationsPy
                | ComposerKind::TextChunksPy
                | ComposerKind::RandomPy
        )
    }

    /// Kinds that deliberately place completion-file content into the context.
    pub fn is_synthetic(self) -> bool {
        matches!(
            self,
            ComposerKind::RandomTokens
                | ComposerKind::Duplication
                | ComposerKind::Leak
                | ComposerKind::MaskedLeak
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ComposerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComposerKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::UnknownComposer {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    #[default]
    None,
    Reversed,
    Irrelevant,
}

impl Modifier {
    pub const ALL: [Modifier; 3] = [Modifier::None, Modifier::Reversed, Modifier::Irrelevant];

    pub fn name(self) -> &'static str {
        match self {
            Modifier::None => "none",
            Modifier::Reversed => "reversed",
            Modifier::Irrelevant => "irrelevant",
        }
    }
}

impl fmt::Display for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modifier {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown modifier {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Training,
    Evaluation,
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "training" => Ok(Mode::Training),
            "evaluation" => Ok(Mode::Evaluation),
            other => Err(ConfigError::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

pub const DEFAULT_DROPOUT_P: f64 = 0.5;
pub const DEFAULT_MASK_P: f64 = 0.15;
pub const DEFAULT_LEAK_SEGMENTS: usize = 5;

/// Full configuration of one composer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposerSpec {
    pub kind: ComposerKind,
    pub modifier: Modifier,
    pub mode: Mode,
    pub max_seq_len: usize,
    pub seed: u64,
    pub dropout_p: f64,
    pub mask_p: f64,
    pub leak_segments: usize,
}

impl ComposerSpec {
    pub fn new(kind: ComposerKind, max_seq_len: usize, seed: u64) -> Self {
        Self {
            kind,
            modifier: Modifier::None,
            mode: Mode::Training,
            max_seq_len,
            seed,
            dropout_p: DEFAULT_DROPOUT_P,
            mask_p: DEFAULT_MASK_P,
            leak_segments: DEFAULT_LEAK_SEGMENTS,
        }
    }

    pub fn with_modifier(mut self, modifier: Modifier) -> Self {
        self.modifier = modifier;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.modifier != Modifier::None && !self.kind.accepts_modifiers() {
            return Err(ConfigError::Invalid(format!(
                "composer {} does not accept modifier {}",
                self.kind, self.modifier
            )));
        }
        for (name, p) in [("dropout_p", self.dropout_p), ("mask_p", self.mask_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.leak_segments == 0 {
            return Err(ConfigError::Invalid("leak_segments must be at least 1".into()));
        }
        Ok(())
    }

    /// Identifier used in dataset rows and manifests, e.g. `path_distance_py+reversed`.
    pub fn id(&self) -> String {
        match self.modifier {
            Modifier::None => self.kind.name().to_string(),
            m => format!("{}+{}", self.kind, m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineCategory {
    Infile,
    Inproject,
    Other,
}

impl LineCategory {
    pub fn name(self) -> &'static str {
        match self {
            LineCategory::Infile => "infile",
            LineCategory::Inproject => "inproject",
            LineCategory::Other => "other",
        }
    }
}

impl fmt::Display for LineCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LineCategory {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "infile" => Ok(LineCategory::Infile),
            "inproject" => Ok(LineCategory::Inproject),
            "other" => Ok(LineCategory::Other),
            other => Err(ConfigError::Invalid(format!("unknown line category {other:?}"))),
        }
    }
}

/// Rewrites CRLF and lone CR to LF.
pub fn normalize_line_endings(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            out.push('\n');
        } else {
            out.push(c);
        }
    }
    out
}

/// Forward-slash relative path without `.`/`..` or empty segments.
pub fn normalize_path(path: &str) -> Result<String, String> {
    let mut segments: Vec<&str> = Vec::new();
    for seg in path.split(['/', '\\']) {
        match seg {
            "" | "." => {}
            ".." => {
                if segments.pop().is_none() {
                    return Err(format!("path {path:?} escapes the repository root"));
                }
            }
            s => segments.push(s),
        }
    }
    if segments.is_empty() {
        return Err("empty path".to_string());
    }
    Ok(segments.join("/"))
}

pub fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn is_blank(text: &str) -> bool {
    text.trim().is_empty()
}

/// LF-normalizes every file and drops the ones left empty or whitespace-only.
pub fn normalize_snapshot(snapshot: &RepositorySnapshot) -> RepositorySnapshot {
    RepositorySnapshot {
        repo: snapshot.repo.clone(),
        commit: snapshot.commit.clone(),
        timestamp: snapshot.timestamp,
        files: normalize_files(snapshot.files.iter().cloned()),
    }
}

pub(crate) fn normalize_files(files: impl IntoIterator<Item = FileEntry>) -> Vec<FileEntry> {
    files
        .into_iter()
        .filter_map(|f| {
            let content = normalize_line_endings(&f.content);
            (!is_blank(&content)).then(|| FileEntry {
                path: normalize_path(&f.path).unwrap_or(f.path),
                content,
            })
        })
        .collect()
}

/// Byte-level ingest: files that are not valid UTF-8 (or have unusable paths)
/// are reported and dropped; everything else goes through [`normalize_snapshot`].
pub fn normalize_raw_files(
    files: impl IntoIterator<Item = (String, Vec<u8>)>,
) -> (Vec<FileEntry>, Vec<FileError>) {
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (path, bytes) in files {
        match FileEntry::from_bytes(&path, bytes) {
            Ok(entry) if !is_blank(&entry.content) => ok.push(entry),
            Ok(_) => {}
            Err(e) => errors.push(e),
        }
    }
    (ok, errors)
}

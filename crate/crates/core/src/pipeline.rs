//! Streaming dataset stages behind the CLI: filter, compose and pack.
//!
//! Every stage reads JSONL line by line and processes bounded batches in
//! parallel, writing results in input order.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composers::{compose_indexed, ContextBudget};
use crate::error::{ConfigError, InputError};
use crate::filter::{select_candidates, CandidateMeta, FilterPolicy, RawCommitRecord, RawFile, StatsAccumulator, StatsReport};
use crate::jsonl::{JsonlReader, JsonlWriter, LineReader};
use crate::model::{
    normalize_line_endings, snapshot_key, ComposedExample, ComposerSpec, CompletionTarget,
    FileEntry, RepositorySnapshot,
};
use crate::packing::{pack_training_example, BinaryWriter, MaskMode, PackedRow, SkipRecord, TruncationPolicy};
use crate::relevance::SnapshotIndex;
use crate::tokenizer::Tokenizer;

/// Upper bound on file content held by one compose batch.
pub const BATCH_BYTES: usize = 64 << 20;
/// Upper bound on the number of snapshots or rows in one batch.
pub const BATCH_ITEMS: usize = 512;

fn io_err(path: &Path, source: std::io::Error) -> InputError {
    InputError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A filtered completion file; its snapshot lives in the sidecar under `snapshot_ref`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRow {
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub completion_path: String,
    pub snapshot_ref: String,
    pub content: String,
}

impl TargetRow {
    pub fn into_target(self) -> CompletionTarget {
        CompletionTarget {
            repo: self.repo,
            commit: self.commit,
            timestamp: self.timestamp,
            file: FileEntry::new(self.completion_path, normalize_line_endings(&self.content)),
        }
    }
}

/// One snapshot in the sidecar file, keyed `repo@commit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub key: String,
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub files: Vec<FileEntry>,
}

impl SnapshotRow {
    pub fn into_snapshot(self) -> RepositorySnapshot {
        let mut snapshot = RepositorySnapshot {
            repo: self.repo,
            commit: self.commit,
            timestamp: self.timestamp,
            files: self.files,
        };
        normalize_in_place(&mut snapshot);
        snapshot
    }
}

/// Same result as `normalize_snapshot`, without copying already clean files.
fn normalize_in_place(snapshot: &mut RepositorySnapshot) {
    for f in &mut snapshot.files {
        if f.content.contains('\r') {
            f.content = normalize_line_endings(&f.content);
        }
    }
    snapshot.files.retain(|f| !f.content.trim().is_empty());
}

/// Only the fields the first filter pass needs; the snapshot is skipped.
#[derive(Deserialize)]
struct RecordHeader {
    repo: String,
    timestamp: i64,
    completion_files: Vec<RawFile>,
}

fn decode_completion_files(files: Vec<RawFile>) -> Vec<FileEntry> {
    let raw = RawCommitRecord {
        repo: String::new(),
        commit: String::new(),
        timestamp: 0,
        snapshot: Vec::new(),
        completion_files: files,
    };
    raw.normalize().0.completion_files
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub records: usize,
    pub candidates: usize,
    pub targets: usize,
    pub snapshots: usize,
    pub file_errors: usize,
}

/// Two passes over `input`: select targets from metadata, then emit target
/// rows and the snapshot sidecar in input order.
pub fn run_filter(input: &Path, targets_out: &Path, snapshots_out: &Path, policy: &FilterPolicy) -> Result<FilterCounts, anyhow::Error> {
    policy.validate()?;
    let mut counts = FilterCounts::default();
    let mut metas = Vec::new();
    for (ri, header) in JsonlReader::<RecordHeader>::open(input)?.enumerate() {
        let header = header?;
        counts.records += 1;
        for (fi, f) in decode_completion_files(header.completion_files).into_iter().enumerate() {
            metas.push(CandidateMeta {
                record: ri,
                file: fi,
                repo: header.repo.clone(),
                path: f.path.clone(),
                timestamp: header.timestamp,
                chars: f.char_len(),
            });
        }
    }
    counts.candidates = metas.len();
    let selected = select_candidates(metas, policy);
    log::info!("filter: {} of {} completion files selected", selected.len(), counts.candidates);

    let mut targets = JsonlWriter::create(targets_out).map_err(|e| io_err(targets_out, e))?;
    let mut snaps = JsonlWriter::create(snapshots_out).map_err(|e| io_err(snapshots_out, e))?;
    let mut next = selected.iter().peekable();
    let mut lines = LineReader::open(input)?;
    let mut ri = 0;
    while next.peek().is_some() {
        let Some(line) = lines.next() else { break };
        let (line_no, text) = line?;
        ri += 1;
        if next.peek().is_some_and(|&&(r, _)| r != ri - 1) {
            continue;
        }
        let ri = ri - 1;
        let raw: RawCommitRecord = lines.parse(line_no, &text)?;
        let (record, errors) = raw.normalize();
        for e in &errors {
            log::warn!("{}@{}: dropped {e}", record.repo, record.commit);
        }
        counts.file_errors += errors.len();
        let key = snapshot_key(&record.repo, &record.commit);
        snaps
            .write(&SnapshotRow {
                key: key.clone(),
                repo: record.repo.clone(),
                commit: record.commit.clone(),
                timestamp: record.timestamp,
                files: record.snapshot.files,
            })
            .map_err(|e| io_err(snapshots_out, e))?;
        counts.snapshots += 1;
        while let Some(&(_, fi)) = next.next_if(|&&(r, _)| r == ri) {
            let f = &record.completion_files[fi];
            targets
                .write(&TargetRow {
                    repo: record.repo.clone(),
                    commit: record.commit.clone(),
                    timestamp: record.timestamp,
                    completion_path: f.path.clone(),
                    snapshot_ref: key.clone(),
                    content: f.content.clone(),
                })
                .map_err(|e| io_err(targets_out, e))?;
            counts.targets += 1;
        }
    }
    targets.finish().map_err(|e| io_err(targets_out, e))?;
    snaps.finish().map_err(|e| io_err(snapshots_out, e))?;
    Ok(counts)
}

/// Stats over raw commit records, streamed.
pub fn run_stats(input: &Path) -> Result<StatsReport, InputError> {
    let mut acc = StatsAccumulator::default();
    for raw in JsonlReader::<RawCommitRecord>::open(input)? {
        let (record, _) = raw?.normalize();
        acc.add(&record);
    }
    Ok(acc.finish())
}

/// A snapshot together with the completion files composed against it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposeGroup {
    pub snapshot: RepositorySnapshot,
    pub targets: Vec<CompletionTarget>,
}

impl ComposeGroup {
    fn bytes(&self) -> usize {
        self.snapshot.files.iter().map(|f| f.content.len()).sum::<usize>()
            + self.targets.iter().map(|t| t.file.content.len()).sum::<usize>()
    }
}

/// Groups from raw commit records: every completion file becomes a target.
pub fn groups_from_records(path: &Path) -> Result<impl Iterator<Item = Result<ComposeGroup, InputError>>, InputError> {
    Ok(JsonlReader::<RawCommitRecord>::open(path)?.map(|raw| {
        let (record, errors) = raw?.normalize();
        for e in &errors {
            log::warn!("{}@{}: dropped {e}", record.repo, record.commit);
        }
        let targets = record
            .completion_files
            .into_iter()
            .map(|file| CompletionTarget {
                repo: record.repo.clone(),
                commit: record.commit.clone(),
                timestamp: record.timestamp,
                file,
            })
            .collect();
        Ok(ComposeGroup {
            snapshot: record.snapshot,
            targets,
        })
    }))
}

/// Merge-joins filtered targets with the snapshot sidecar. Both files are in
/// the order `filter` wrote them, so one sequential pass over each suffices.
pub struct TargetGroups {
    targets: std::iter::Peekable<JsonlReader<TargetRow>>,
    snapshots: JsonlReader<SnapshotRow>,
    snapshots_path: String,
}

impl TargetGroups {
    pub fn open(targets: &Path, snapshots: &Path) -> Result<Self, InputError> {
        Ok(Self {
            targets: JsonlReader::open(targets)?.peekable(),
            snapshots: JsonlReader::open(snapshots)?,
            snapshots_path: snapshots.display().to_string(),
        })
    }

    fn find_snapshot(&mut self, key: &str) -> Result<RepositorySnapshot, InputError> {
        for row in self.snapshots.by_ref() {
            let row = row?;
            if row.key == key {
                return Ok(row.into_snapshot());
            }
        }
        Err(InputError::Invalid(format!(
            "snapshot {key:?} not found in {} (targets and snapshots must come from the same filter run)",
            self.snapshots_path
        )))
    }
}

impl Iterator for TargetGroups {
    type Item = Result<ComposeGroup, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.targets.next()? {
            Ok(row) => row,
            Err(e) => return Some(Err(e)),
        };
        let key = first.snapshot_ref.clone();
        let mut rows = vec![first];
        while let Some(Ok(row)) = self.targets.peek() {
            if row.snapshot_ref != key {
                break;
            }
            rows.push(self.targets.next().expect("peeked").expect("peeked ok"));
        }
        Some(self.find_snapshot(&key).map(|snapshot| ComposeGroup {
            snapshot,
            targets: rows.into_iter().map(TargetRow::into_target).collect(),
        }))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeCounts {
    pub snapshots: usize,
    pub examples: usize,
    pub duplicate_ids: usize,
}

fn compose_batch(
    batch: &[ComposeGroup],
    spec: &ComposerSpec,
    budget: &ContextBudget<'_>,
) -> Result<Vec<Vec<ComposedExample>>, ConfigError> {
    batch
        .par_iter()
        .map(|g| {
            let index = SnapshotIndex::new(&g.snapshot);
            g.targets
                .iter()
                .map(|t| compose_indexed(spec, &index, t, budget))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect()
}

/// Composes every group and writes one JSONL row per example in input order.
pub fn run_compose(
    groups: impl Iterator<Item = Result<ComposeGroup, InputError>>,
    spec: &ComposerSpec,
    budget: &ContextBudget<'_>,
    out: &mut JsonlWriter,
) -> Result<ComposeCounts, anyhow::Error> {
    spec.validate()?;
    let mut counts = ComposeCounts::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut batch: Vec<ComposeGroup> = Vec::new();
    let mut batch_bytes = 0;
    let mut flush = |batch: &mut Vec<ComposeGroup>, counts: &mut ComposeCounts| -> Result<(), anyhow::Error> {
        for examples in compose_batch(batch, spec, budget)? {
            for ex in examples {
                if !seen.insert(ex.example_id.clone()) {
                    counts.duplicate_ids += 1;
                    log::warn!("duplicate example id {}; keeping the first", ex.example_id);
                    continue;
                }
                out.write(&ex).map_err(|e| io_err(out.path(), e))?;
                counts.examples += 1;
            }
        }
        counts.snapshots += batch.len();
        batch.clear();
        Ok(())
    };
    for group in groups {
        let group = group?;
        batch_bytes += group.bytes();
        batch.push(group);
        if batch_bytes >= BATCH_BYTES || batch.len() >= BATCH_ITEMS {
            flush(&mut batch, &mut counts)?;
            batch_bytes = 0;
        }
    }
    flush(&mut batch, &mut counts)?;
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackFormat {
    #[default]
    Jsonl,
    Binary,
}

impl std::str::FromStr for PackFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(PackFormat::Jsonl),
            "binary" => Ok(PackFormat::Binary),
            other => Err(ConfigError::Invalid(format!("unknown pack format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackCounts {
    pub examples: usize,
    pub skipped: usize,
    pub total_tokens: u64,
    pub loss_tokens: u64,
}

enum PackSink {
    Jsonl(JsonlWriter),
    Binary(BinaryWriter<BufWriter<File>>),
}

/// Packs composed rows (context + formatted completion) into training examples.
pub fn run_pack(
    input: &Path,
    output: &Path,
    skipped_out: &Path,
    format: PackFormat,
    policy: &TruncationPolicy,
    mask: MaskMode,
    tok: &dyn Tokenizer,
) -> Result<PackCounts, anyhow::Error> {
    policy.validate()?;
    let mut sink = match format {
        PackFormat::Jsonl => PackSink::Jsonl(JsonlWriter::create(output).map_err(|e| io_err(output, e))?),
        PackFormat::Binary => {
            let f = File::create(output).map_err(|e| io_err(output, e))?;
            PackSink::Binary(BinaryWriter::new(BufWriter::with_capacity(1 << 20, f)).map_err(|e| io_err(output, e))?)
        }
    };
    let mut skipped = JsonlWriter::create(skipped_out).map_err(|e| io_err(skipped_out, e))?;
    let mut counts = PackCounts::default();
    let mut reader = JsonlReader::<ComposedExample>::open(input)?;
    loop {
        let batch: Vec<ComposedExample> = reader.by_ref().take(BATCH_ITEMS).collect::<Result<_, _>>()?;
        if batch.is_empty() {
            break;
        }
        let packed: Vec<Result<PackedRow, SkipRecord>> = batch
            .par_iter()
            .map(|ex| {
                pack_training_example(&ex.example_id, &ex.context, &ex.completion, policy, mask, tok)
                    .map(|p| PackedRow::new(p, tok.name()))
            })
            .collect();
        for row in packed {
            match row {
                Ok(row) => {
                    counts.examples += 1;
                    counts.total_tokens += row.input_ids.len() as u64;
                    counts.loss_tokens += row.loss_mask.iter().map(|&b| b as u64).sum::<u64>();
                    match &mut sink {
                        PackSink::Jsonl(w) => w.write(&row),
                        PackSink::Binary(w) => w.write(&row),
                    }
                    .map_err(|e| io_err(output, e))?;
                }
                Err(skip) => {
                    counts.skipped += 1;
                    skipped.write(&skip).map_err(|e| io_err(skipped_out, e))?;
                }
            }
        }
    }
    match sink {
        PackSink::Jsonl(w) => {
            w.finish().map_err(|e| io_err(output, e))?;
        }
        PackSink::Binary(w) => w.into_inner().flush().map_err(|e| io_err(output, e))?,
    }
    skipped.finish().map_err(|e| io_err(skipped_out, e))?;
    Ok(counts)
}

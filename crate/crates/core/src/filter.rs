//! Commit-record ingest and the raw-dataset filtering rules.

use std::collections::{BTreeSet, HashMap};

use base64::Engine;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::model::{
    normalize_raw_files, CompletionTarget, FileEntry, FileError, RepositorySnapshot,
};

/// A commit as it arrives from history mining: the snapshot before the commit
/// and the `.py` files it added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub snapshot: RepositorySnapshot,
    pub completion_files: Vec<FileEntry>,
}

/// A file on the wire. `content_b64` carries raw bytes so invalid UTF-8 can
/// be reported per file instead of failing the whole line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawFile {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_b64: Option<String>,
}

impl RawFile {
    pub fn text(path: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            content: Some(content.into()),
            content_b64: None,
        }
    }

    fn into_bytes(self) -> Result<(String, Vec<u8>), FileError> {
        match (self.content, self.content_b64) {
            (Some(c), _) => Ok((self.path, c.into_bytes())),
            (None, Some(b)) => match base64::engine::general_purpose::STANDARD.decode(b.as_bytes()) {
                Ok(bytes) => Ok((self.path, bytes)),
                Err(e) => Err(FileError {
                    path: self.path,
                    reason: format!("bad base64 content: {e}"),
                }),
            },
            (None, None) => Err(FileError {
                path: self.path,
                reason: "missing content".to_string(),
            }),
        }
    }
}

/// One JSONL input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCommitRecord {
    pub repo: String,
    pub commit: String,
    pub timestamp: i64,
    pub snapshot: Vec<RawFile>,
    pub completion_files: Vec<RawFile>,
}

impl RawCommitRecord {
    /// Normalizes the record. Undecodable files are dropped and reported.
    pub fn normalize(self) -> (CommitRecord, Vec<FileError>) {
        let mut errors = Vec::new();
        let mut decode = |files: Vec<RawFile>| {
            let mut raw = Vec::with_capacity(files.len());
            for f in files {
                match f.into_bytes() {
                    Ok(pair) => raw.push(pair),
                    Err(e) => errors.push(e),
                }
            }
            let (ok, errs) = normalize_raw_files(raw);
            errors.extend(errs);
            ok
        };
        let snapshot_files = dedup_paths(decode(self.snapshot));
        let completion_files = decode(self.completion_files);
        let record = CommitRecord {
            snapshot: RepositorySnapshot {
                repo: self.repo.clone(),
                commit: self.commit.clone(),
                timestamp: self.timestamp,
                files: snapshot_files,
            },
            repo: self.repo,
            commit: self.commit,
            timestamp: self.timestamp,
            completion_files,
        };
        (record, errors)
    }
}

/// Keeps the first entry for each path so snapshot paths stay unique.
fn dedup_paths(files: Vec<FileEntry>) -> Vec<FileEntry> {
    let mut seen = std::collections::HashSet::new();
    files.into_iter().filter(|f| seen.insert(f.path.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_year: i32,
    pub min_chars: usize,
    pub max_chars: usize,
    pub max_files_per_repo: usize,
    #[serde(default)]
    pub holdout_repos: BTreeSet<String>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_year: 2010,
            min_chars: 800,
            max_chars: 25_000,
            max_files_per_repo: 1000,
            holdout_repos: BTreeSet::new(),
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_chars == 0 || self.max_files_per_repo == 0 || self.min_year <= 0 {
            return Err(ConfigError::Invalid("filter bounds must be positive".into()));
        }
        if self.min_chars > self.max_chars {
            return Err(ConfigError::Invalid(format!(
                "min_chars {} exceeds max_chars {}",
                self.min_chars, self.max_chars
            )));
        }
        Ok(())
    }

    /// First second of `min_year` in UTC.
    pub fn cutoff_timestamp(&self) -> i64 {
        NaiveDate::from_ymd_opt(self.min_year, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(|dt| dt.and_utc().timestamp())
            .unwrap_or(i64::MIN)
    }
}

/// What the selector needs to know about one completion file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateMeta {
    pub record: usize,
    pub file: usize,
    pub repo: String,
    pub path: String,
    pub timestamp: i64,
    pub chars: usize,
}

impl CandidateMeta {
    fn file_name(&self) -> &str {
        crate::model::file_name(&self.path)
    }
}

/// Newest first, then full path, then input position.
fn recency_order(a: &CandidateMeta, b: &CandidateMeta) -> std::cmp::Ordering {
    b.timestamp
        .cmp(&a.timestamp)
        .then_with(|| a.path.cmp(&b.path))
        .then_with(|| (a.record, a.file).cmp(&(b.record, b.file)))
}

/// Applies every rule to completion-file metadata and returns the surviving
/// `(record, file)` positions in input order.
pub fn select_candidates(candidates: impl IntoIterator<Item = CandidateMeta>, policy: &FilterPolicy) -> Vec<(usize, usize)> {
    let cutoff = policy.cutoff_timestamp();
    let mut best: HashMap<(String, String), CandidateMeta> = HashMap::new();
    for c in candidates {
        if policy.holdout_repos.contains(&c.repo)
            || c.timestamp < cutoff
            || !c.path.ends_with(".py")
            || c.chars < policy.min_chars
            || c.chars > policy.max_chars
        {
            continue;
        }
        let key = (c.repo.clone(), c.file_name().to_string());
        match best.get(&key) {
            Some(prev) if recency_order(prev, &c).is_le() => {}
            _ => {
                best.insert(key, c);
            }
        }
    }
    let mut per_repo: HashMap<String, Vec<CandidateMeta>> = HashMap::new();
    for (_, c) in best {
        per_repo.entry(c.repo.clone()).or_default().push(c);
    }
    let mut kept = Vec::new();
    for (_, mut files) in per_repo {
        files.sort_by(recency_order);
        files.truncate(policy.max_files_per_repo);
        kept.extend(files.into_iter().map(|c| (c.record, c.file)));
    }
    kept.sort_unstable();
    kept
}

/// Metadata of every completion file in `records`.
pub fn candidate_metas(records: &[CommitRecord]) -> Vec<CandidateMeta> {
    records
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| {
            r.completion_files.iter().enumerate().map(move |(fi, f)| CandidateMeta {
                record: ri,
                file: fi,
                repo: r.repo.clone(),
                path: f.path.clone(),
                timestamp: r.timestamp,
                chars: f.char_len(),
            })
        })
        .collect()
}

/// A surviving completion file with the snapshot it is composed against.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedTarget<'a> {
    pub target: CompletionTarget,
    pub snapshot: &'a RepositorySnapshot,
}

pub fn filter_dataset<'a>(records: &'a [CommitRecord], policy: &FilterPolicy) -> Vec<SelectedTarget<'a>> {
    select_candidates(candidate_metas(records), policy)
        .into_iter()
        .map(|(ri, fi)| {
            let r = &records[ri];
            SelectedTarget {
                target: CompletionTarget {
                    repo: r.repo.clone(),
                    commit: r.commit.clone(),
                    timestamp: r.timestamp,
                    file: r.completion_files[fi].clone(),
                },
                snapshot: &r.snapshot,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub repos: usize,
    pub commits: usize,
    pub completion_files: usize,
    pub completion_chars: u64,
    pub snapshot_chars: u64,
}

/// Incremental [`StatsReport`] builder for streamed input.
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    repos: BTreeSet<String>,
    report: StatsReport,
}

impl StatsAccumulator {
    pub fn add(&mut self, record: &CommitRecord) {
        if !self.repos.contains(&record.repo) {
            self.repos.insert(record.repo.clone());
        }
        self.report.commits += 1;
        self.report.completion_files += record.completion_files.len();
        self.report.completion_chars += record.completion_files.iter().map(|f| f.char_len() as u64).sum::<u64>();
        self.report.snapshot_chars += record.snapshot.files.iter().map(|f| f.char_len() as u64).sum::<u64>();
    }

    pub fn finish(mut self) -> StatsReport {
        self.report.repos = self.repos.len();
        self.report
    }
}

pub fn dataset_stats<'a>(records: impl IntoIterator<Item = &'a CommitRecord>) -> StatsReport {
    let mut acc = StatsAccumulator::default();
    for r in records {
        acc.add(r);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(repo: &str, commit: &str, ts: i64, files: Vec<(&str, usize)>) -> CommitRecord {
        CommitRecord {
            repo: repo.into(),
            commit: commit.into(),
            timestamp: ts,
            snapshot: RepositorySnapshot {
                repo: repo.into(),
                commit: commit.into(),
                timestamp: ts,
                files: vec![FileEntry::new("s.py", "abc")],
            },
            completion_files: files.into_iter().map(|(p, n)| FileEntry::new(p, "x".repeat(n))).collect(),
        }
    }

    const T2010: i64 = 1_262_304_000;

    fn kept_paths(records: &[CommitRecord], policy: &FilterPolicy) -> Vec<String> {
        filter_dataset(records, policy).into_iter().map(|t| t.target.file.path).collect()
    }

    #[test]
    fn cutoff_is_new_year_utc() {
        assert_eq!(FilterPolicy::default().cutoff_timestamp(), T2010);
    }

    #[test]
    fn year_boundary() {
        let recs = vec![record("r", "a", T2010 - 1, vec![("old.py", 1000)]), record("r", "b", T2010, vec![("new.py", 1000)])];
        assert_eq!(kept_paths(&recs, &FilterPolicy::default()), vec!["new.py"]);
    }

    #[test]
    fn length_bounds_are_closed() {
        let recs = vec![record("r", "a", T2010, vec![("a.py", 799), ("b.py", 800), ("c.py", 25_000), ("d.py", 25_001)])];
        assert_eq!(kept_paths(&recs, &FilterPolicy::default()), vec!["b.py", "c.py"]);
    }

    #[test]
    fn dedup_by_file_name_keeps_newest() {
        let recs = vec![
            record("r", "a", T2010 + 100, vec![("pkg/utils.py", 900)]),
            record("r", "b", T2010 + 200, vec![("lib/utils.py", 900)]),
            record("q", "c", T2010 + 50, vec![("utils.py", 900)]),
        ];
        let out = filter_dataset(&recs, &FilterPolicy::default());
        let got: Vec<(&str, &str)> = out.iter().map(|t| (t.target.repo.as_str(), t.target.file.path.as_str())).collect();
        assert_eq!(got, vec![("r", "lib/utils.py"), ("q", "utils.py")]);
    }

    #[test]
    fn per_repo_cap_keeps_newest() {
        let names: Vec<String> = (0..1005).map(|i| format!("f{i:04}.py")).collect();
        let recs: Vec<CommitRecord> = names
            .iter()
            .enumerate()
            .map(|(i, n)| record("r", &format!("c{i}"), T2010 + i as i64, vec![(n.as_str(), 900)]))
            .collect();
        let out = kept_paths(&recs, &FilterPolicy::default());
        assert_eq!(out.len(), 1000);
        assert_eq!(out[0], "f0005.py");
    }

    #[test]
    fn holdout_and_non_python_are_removed() {
        let mut policy = FilterPolicy::default();
        policy.holdout_repos.insert("held".into());
        let recs = vec![record("held", "a", T2010, vec![("a.py", 900)]), record("r", "b", T2010, vec![("a.txt", 900)])];
        assert!(kept_paths(&recs, &policy).is_empty());
    }

    #[test]
    fn stats_count_rows_as_given() {
        assert_eq!(dataset_stats(&[]), StatsReport::default());
        let r1 = record("r", "a", T2010, vec![("a.py", 10), ("b.py", 10)]);
        let r2 = record("r", "b", T2010, vec![("c.py", 10)]);
        let s = dataset_stats([&r1, &r2]);
        assert_eq!(s, StatsReport { repos: 1, commits: 2, completion_files: 3, completion_chars: 30, snapshot_chars: 6 });
        assert_eq!(dataset_stats([&r1, &r1]).commits, 2);
    }

    #[test]
    fn raw_records_normalize_and_report_bad_files() {
        let raw = RawCommitRecord {
            repo: "r".into(),
            commit: "c".into(),
            timestamp: 5,
            snapshot: vec![
                RawFile::text("a.py", "x\r\n"),
                RawFile::text("a.py", "dup"),
                RawFile::text("e.txt", "  "),
                RawFile { path: "bad.py".into(), content: None, content_b64: Some("/w==".into()) },
            ],
            completion_files: vec![RawFile::text("n.py", "y")],
        };
        let (rec, errs) = raw.normalize();
        assert_eq!(rec.snapshot.files, vec![FileEntry::new("a.py", "x\n")]);
        assert_eq!(rec.completion_files.len(), 1);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "bad.py");
    }

    #[test]
    fn tightening_bounds_never_grows_output() {
        let recs: Vec<CommitRecord> = (0..50)
            .map(|i| record(&format!("r{}", i % 3), &format!("c{i}"), T2010 + i, vec![(&*format!("f{}.py", i % 7), 700 + 20 * i as usize)]))
            .collect();
        let loose = FilterPolicy::default();
        let mut tight = loose.clone();
        tight.min_chars = 1000;
        tight.max_files_per_repo = 2;
        assert!(kept_paths(&recs, &tight).len() <= kept_paths(&recs, &loose).len());
    }
}

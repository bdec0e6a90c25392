//! Ranking primitives for the retrieval-based composers.
//!
//! Every ranking is returned least-relevant-first so that concatenating it in
//! order puts the most relevant file right before the completion file.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ConfigError;
use crate::model::{CompletionTarget, FileEntry, RepositorySnapshot};

/// Lines shorter than this (after trimming) do not take part in IoU.
pub const MIN_IOU_LINE_CHARS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RankScheme {
    PathDistancePy,
    LinesIouPy,
    TextGroups,
    RandomAll,
    RandomPy,
}

impl FromStr for RankScheme {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path_distance_py" => Ok(RankScheme::PathDistancePy),
            "lines_iou_py" => Ok(RankScheme::LinesIouPy),
            "text_groups" => Ok(RankScheme::TextGroups),
            "random_all" => Ok(RankScheme::RandomAll),
            "random_py" => Ok(RankScheme::RandomPy),
            other => Err(ConfigError::Invalid(format!("unknown ranking scheme {other:?}"))),
        }
    }
}

/// Candidate files ordered least-relevant-first, with the sort keys that produced
/// the order. For path distance the scores are `(distance, iou)`, for IoU
/// `(iou, 0)`, for text groups `(group, distance)` and `(0, 0)` for random orders.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedFiles<'a> {
    pub files: Vec<&'a FileEntry>,
    pub scores: Vec<(f64, f64)>,
}

impl<'a> RankedFiles<'a> {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Most relevant becomes least relevant.
    pub fn inverted(mut self) -> Self {
        self.files.reverse();
        self.scores.reverse();
        self
    }

    pub fn paths(&self) -> Vec<&'a str> {
        self.files.iter().map(|f| f.path.as_str()).collect()
    }
}

fn dirs(path: &str) -> &str {
    path.rfind('/').map_or("", |i| &path[..i])
}

/// Number of directory hops between the folders containing `a` and `b`.
pub fn path_distance(a: &str, b: &str) -> usize {
    let da: Vec<&str> = dirs(a).split('/').filter(|s| !s.is_empty()).collect();
    let db: Vec<&str> = dirs(b).split('/').filter(|s| !s.is_empty()).collect();
    let common = da.iter().zip(&db).take_while(|(x, y)| x == y).count();
    (da.len() - common) + (db.len() - common)
}

/// Distinct trimmed lines of at least [`MIN_IOU_LINE_CHARS`] characters.
pub fn iou_lines(content: &str) -> HashSet<&str> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| l.chars().count() >= MIN_IOU_LINE_CHARS)
        .collect()
}

pub fn set_iou(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|l| large.contains(*l)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union of the qualifying line sets of two files.
pub fn lines_iou(a: &str, b: &str) -> f64 {
    set_iou(&iou_lines(a), &iou_lines(b))
}

/// Extension group for the text-files composer; higher is more relevant.
pub fn text_group(path: &str) -> Option<u8> {
    let ext = path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase())?;
    match ext.as_str() {
        "json" => Some(0),
        "yaml" | "yml" => Some(1),
        "sh" => Some(2),
        "md" | "txt" | "rst" => Some(3),
        _ => None,
    }
}

/// Snapshot with per-file line sets computed once, so several completion files
/// of the same commit can be ranked without rehashing the snapshot.
pub struct SnapshotIndex<'a> {
    files: &'a [FileEntry],
    line_sets: Vec<Option<HashSet<&'a str>>>,
}

impl<'a> SnapshotIndex<'a> {
    pub fn new(snapshot: &'a RepositorySnapshot) -> Self {
        Self::from_files(&snapshot.files)
    }

    pub fn from_files(files: &'a [FileEntry]) -> Self {
        let line_sets = files
            .iter()
            .map(|f| f.is_python().then(|| iou_lines(&f.content)))
            .collect();
        Self { files, line_sets }
    }

    pub fn files(&self) -> &'a [FileEntry] {
        self.files
    }

    fn candidates<'s>(
        &'s self,
        completion_path: &'s str,
        python_only: bool,
    ) -> impl Iterator<Item = (usize, &'a FileEntry)> + 's {
        self.files
            .iter()
            .enumerate()
            .filter(move |(_, f)| f.path != completion_path && (!python_only || f.is_python()))
    }

    fn iou_with(&self, idx: usize, target: &HashSet<&str>) -> f64 {
        match &self.line_sets[idx] {
            Some(set) => set_iou(set, target),
            None => set_iou(&iou_lines(&self.files[idx].content), target),
        }
    }

    pub fn rank(&self, completion: &CompletionTarget, scheme: RankScheme, seed: u64) -> RankedFiles<'a> {
        let cpath = completion.file.path.as_str();
        match scheme {
            RankScheme::PathDistancePy => {
                let target = iou_lines(&completion.file.content);
                let mut rows: Vec<(usize, f64, &FileEntry)> = self
                    .candidates(cpath, true)
                    .map(|(i, f)| (path_distance(&f.path, cpath), self.iou_with(i, &target), f))
                    .collect();
                rows.sort_by(|a, b| {
                    b.0.cmp(&a.0)
                        .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                        .then_with(|| a.2.path.cmp(&b.2.path))
                });
                RankedFiles {
                    scores: rows.iter().map(|r| (r.0 as f64, r.1)).collect(),
                    files: rows.into_iter().map(|r| r.2).collect(),
                }
            }
            RankScheme::LinesIouPy => {
                let target = iou_lines(&completion.file.content);
                let mut rows: Vec<(f64, &FileEntry)> = self
                    .candidates(cpath, true)
                    .map(|(i, f)| (self.iou_with(i, &target), f))
                    .collect();
                rows.sort_by(|a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(Ordering::Equal)
                        .then_with(|| a.1.path.cmp(&b.1.path))
                });
                RankedFiles {
                    scores: rows.iter().map(|r| (r.0, 0.0)).collect(),
                    files: rows.into_iter().map(|r| r.1).collect(),
                }
            }
            RankScheme::TextGroups => {
                let mut rows: Vec<(u8, usize, &FileEntry)> = self
                    .candidates(cpath, false)
                    .filter_map(|(_, f)| text_group(&f.path).map(|g| (g, path_distance(&f.path, cpath), f)))
                    .collect();
                rows.sort_by(|a, b| {
                    a.0.cmp(&b.0)
                        .then(b.1.cmp(&a.1))
                        .then_with(|| a.2.path.cmp(&b.2.path))
                });
                RankedFiles {
                    scores: rows.iter().map(|r| (r.0 as f64, r.1 as f64)).collect(),
                    files: rows.into_iter().map(|r| r.2).collect(),
                }
            }
            RankScheme::RandomAll | RankScheme::RandomPy => {
                let mut files: Vec<&FileEntry> = self
                    .candidates(cpath, scheme == RankScheme::RandomPy)
                    .map(|(_, f)| f)
                    .collect();
                files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                RankedFiles {
                    scores: vec![(0.0, 0.0); files.len()],
                    files,
                }
            }
        }
    }
}

/// Ranks the snapshot's candidate files for one completion file.
pub fn rank_files<'a>(
    snapshot: &'a RepositorySnapshot,
    completion: &CompletionTarget,
    scheme: RankScheme,
    seed: u64,
) -> RankedFiles<'a> {
    SnapshotIndex::new(snapshot).rank(completion, scheme, seed)
}

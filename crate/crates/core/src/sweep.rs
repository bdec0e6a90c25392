//! Context-length sweep: score an external predictor at several maximum
//! sequence lengths.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::eval::{exact_match, item_category, round1, EvalItem, Prediction};
use crate::model::LineCategory;
use crate::packing::prepare_eval_sequence;
use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_LENGTHS: [usize; 8] = [1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072];

/// Environment variable telling a predictor command the current length.
pub const MAX_SEQ_LEN_ENV: &str = "REPOCOMPOSE_MAX_SEQ_LEN";

/// One prepared prompt handed to a predictor.
#[derive(Debug, Clone, Serialize)]
pub struct PredictRequest {
    pub example_id: String,
    pub input_ids: Vec<TokenId>,
    pub text: String,
}

/// Produces one predicted line per request at a given maximum length.
pub trait Predictor: Sync {
    fn predict(&self, max_seq_len: usize, requests: &[PredictRequest]) -> Result<HashMap<String, String>>;
}

/// Reads predictions from a JSONL file per length. `{len}` in the pattern is
/// replaced with the length.
pub struct FilePredictor {
    pub pattern: String,
}

impl Predictor for FilePredictor {
    fn predict(&self, max_seq_len: usize, _requests: &[PredictRequest]) -> Result<HashMap<String, String>> {
        let path = PathBuf::from(self.pattern.replace("{len}", &max_seq_len.to_string()));
        read_predictions(&path)
    }
}

pub fn read_predictions(path: &std::path::Path) -> Result<HashMap<String, String>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        out.insert(p.example_id, p.prediction);
    }
    Ok(out)
}

/// Runs `sh -c <command>` once per length, writing requests as JSONL to its
/// stdin and reading `{"example_id","prediction"}` lines from its stdout.
pub struct CommandPredictor {
    pub command: String,
}

impl Predictor for CommandPredictor {
    fn predict(&self, max_seq_len: usize, requests: &[PredictRequest]) -> Result<HashMap<String, String>> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .env(MAX_SEQ_LEN_ENV, max_seq_len.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("starting predictor {:?}", self.command))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload: Vec<u8> = requests
            .iter()
            .flat_map(|r| {
                let mut line = serde_json::to_vec(r).expect("request serializes");
                line.push(b'\n');
                line
            })
            .collect();
        // Write from a thread so a predictor that answers while reading cannot deadlock.
        let writer = std::thread::spawn(move || stdin.write_all(&payload));
        let output = child.wait_with_output()?;
        let _ = writer.join();
        if !output.status.success() {
            bail!("predictor exited with {}", output.status);
        }
        let mut out = HashMap::new();
        for line in output.stdout.split(|&b| b == b'\n') {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let p: Prediction = serde_json::from_slice(line).context("predictor output line")?;
            out.insert(p.example_id, p.prediction);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub length: usize,
    pub category: LineCategory,
    /// `None` when the predictor failed at this length.
    pub exact_match: Option<f64>,
    pub count: usize,
}

pub const SWEEP_CSV_HEADER: &str = "length,category,exact_match,count";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let em = r.exact_match.map(|v| format!("{v:.1}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.length, r.category, em, r.count));
    }
    out
}

/// Scores `predictor` at every length, one row per (length, category).
pub fn context_scaling_sweep(
    items: &[EvalItem],
    predictor: &dyn Predictor,
    lengths: &[usize],
    tok: &dyn Tokenizer,
) -> Vec<SweepRow> {
    let labels: Vec<LineCategory> = items.par_iter().map(item_category).collect();
    let mut totals: BTreeMap<LineCategory, usize> = BTreeMap::new();
    for c in &labels {
        *totals.entry(*c).or_default() += 1;
    }
    let mut rows = Vec::new();
    for &len in lengths {
        let requests: Vec<PredictRequest> = items
            .par_iter()
            .map(|it| {
                let input_ids = prepare_eval_sequence(&it.context, &it.file_prefix, len, tok);
                PredictRequest {
                    example_id: it.example_id.clone(),
                    text: tok.decode(&input_ids),
                    input_ids,
                }
            })
            .collect();
        match predictor.predict(len, &requests) {
            Ok(preds) => {
                let mut hits: BTreeMap<LineCategory, usize> = BTreeMap::new();
                for (it, c) in items.iter().zip(&labels) {
                    let ok = preds.get(&it.example_id).is_some_and(|p| exact_match(p, &it.ground_truth_line));
                    *hits.entry(*c).or_default() += ok as usize;
                }
                for (&cat, &n) in &totals {
                    let m = hits.get(&cat).copied().unwrap_or(0);
                    rows.push(SweepRow {
                        length: len,
                        category: cat,
                        exact_match: Some(round1(100.0 * m as f64 / n as f64)),
                        count: n,
                    });
                }
            }
            Err(e) => {
                log::warn!("predictor failed at length {len}: {e:#}");
                for (&cat, &n) in &totals {
                    rows.push(SweepRow {
                        length: len,
                        category: cat,
                        exact_match: None,
                        count: n,
                    });
                }
            }
        }
    }
    rows
}

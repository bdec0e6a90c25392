//! Composers that fabricate or corrupt context: half-memory dropout, random
//! tokens, duplication, leak and masked leak.

use rand::seq::index::sample;
use rand::Rng;

use super::fit::{format_file, ContextBudget};
use crate::model::FileEntry;
use crate::tokenizer::{TokenId, Tokenizer};

/// Number of lines in each masked-leak segment.
pub const MASKED_SEGMENT_LINES: usize = 5;

/// Random placements tried per segment before falling back to a linear scan.
const PLACEMENT_ATTEMPTS: usize = 64;

/// Keeps each line independently with probability `1 - p`.
pub fn half_memory_dropout<R: Rng + ?Sized>(content: &str, p: f64, rng: &mut R) -> String {
    let mut out = String::with_capacity(content.len() / 2 + 1);
    for line in content.split_inclusive('\n') {
        if rng.gen::<f64>() >= p {
            out.push_str(line);
        }
    }
    out
}

/// Longest decodable suffix of `ids` with at most `max` tokens.
pub(crate) fn decode_suffix(tok: &dyn Tokenizer, ids: &[TokenId], max: usize) -> (String, usize) {
    let mut start = ids.len().saturating_sub(max);
    while start < ids.len() {
        if let Some(text) = tok.decode_exact(&ids[start..]) {
            return (text, ids.len() - start);
        }
        start += 1;
    }
    (String::new(), 0)
}

/// The formatted completion file repeated until the budget is reached, then
/// left-truncated to exactly the budget.
pub fn duplication_context(completion: &FileEntry, budget: &ContextBudget<'_>) -> String {
    let tok = budget.tokenizer;
    let max = budget.max_context_tokens;
    let unit = tok.encode(&format_file(completion));
    if max == 0 || unit.is_empty() {
        return String::new();
    }
    let copies = max.div_ceil(unit.len());
    let mut ids = Vec::with_capacity(copies * unit.len());
    for _ in 0..copies {
        ids.extend_from_slice(&unit);
    }
    decode_suffix(tok, &ids, max).0
}

/// `budget` ids drawn uniformly and independently from the non-special vocabulary.
pub fn random_token_context<R: Rng + ?Sized>(budget: usize, rng: &mut R, tok: &dyn Tokenizer) -> Vec<TokenId> {
    let pool = tok.non_special_ids();
    if pool.is_empty() {
        return Vec::new();
    }
    (0..budget).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// Splits `content` at up to `segments - 1` distinct, uniformly chosen newlines.
/// Falls back to fewer segments when there are not enough interior newlines.
pub fn split_at_random_newlines<R: Rng + ?Sized>(content: &str, segments: usize, rng: &mut R) -> Vec<String> {
    let cut_points: Vec<usize> = content
        .char_indices()
        .filter(|&(i, c)| c == '\n' && i + 1 < content.len())
        .map(|(i, _)| i + 1)
        .collect();
    let cuts = segments.saturating_sub(1).min(cut_points.len());
    let mut chosen: Vec<usize> = sample(rng, cut_points.len(), cuts)
        .into_iter()
        .map(|i| cut_points[i])
        .collect();
    chosen.sort_unstable();
    let mut out = Vec::with_capacity(chosen.len() + 1);
    let mut start = 0;
    for cut in chosen {
        out.push(content[start..cut].to_string());
        start = cut;
    }
    out.push(content[start..].to_string());
    out
}

/// Five-line windows where consecutive windows share exactly one line.
pub fn masked_segments(content: &str) -> Vec<String> {
    let lines: Vec<&str> = content.split_inclusive('\n').collect();
    let n = lines.len();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut start = 0;
    loop {
        let end = (start + MASKED_SEGMENT_LINES).min(n);
        let mut seg = lines[start..end].concat();
        if !seg.ends_with('\n') {
            seg.push('\n');
        }
        out.push(seg);
        if end >= n {
            break;
        }
        start += MASKED_SEGMENT_LINES - 1;
    }
    out
}

/// Line ranges `[start, end)` of the base context replaced by each segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub segment: usize,
    pub start: usize,
    pub end: usize,
}

fn run_end(line_tokens: &[usize], start: usize, need: usize) -> Option<usize> {
    let mut acc = 0;
    for (i, t) in line_tokens.iter().enumerate().skip(start) {
        acc += t;
        if acc >= need {
            return Some(i + 1);
        }
    }
    None
}

fn overlaps(taken: &[Placement], start: usize, end: usize) -> bool {
    taken.iter().any(|p| start < p.end && p.start < end)
}

/// Replaces disjoint runs of context lines with the given segments. Each run
/// starts at a random line and is the shortest one whose token count reaches
/// the segment's. Segments that find no room are appended at the end in
/// their original order.
pub fn place_segments<R: Rng + ?Sized>(
    base: &str,
    segments: &[String],
    rng: &mut R,
    tok: &dyn Tokenizer,
) -> (String, Vec<Placement>) {
    let lines: Vec<&str> = base.split_inclusive('\n').collect();
    let line_tokens: Vec<usize> = lines.iter().map(|l| tok.count(l)).collect();
    let mut taken: Vec<Placement> = Vec::new();
    let mut overflow: Vec<usize> = Vec::new();

    let needs: Vec<usize> = segments.iter().map(|s| tok.count(s).max(1)).collect();
    // Largest first, so small segments cannot fragment the room big ones need.
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(needs[i]));
    for si in order {
        let need = needs[si];
        let mut placed = None;
        if !lines.is_empty() {
            for _ in 0..PLACEMENT_ATTEMPTS {
                let start = rng.gen_range(0..lines.len());
                if let Some(end) = run_end(&line_tokens, start, need) {
                    if !overlaps(&taken, start, end) {
                        placed = Some((start, end));
                        break;
                    }
                }
            }
            if placed.is_none() {
                placed = (0..lines.len()).find_map(|start| {
                    run_end(&line_tokens, start, need)
                        .filter(|&end| !overlaps(&taken, start, end))
                        .map(|end| (start, end))
                });
            }
        }
        match placed {
            Some((start, end)) => taken.push(Placement { segment: si, start, end }),
            None => overflow.push(si),
        }
    }

    taken.sort_by_key(|p| p.start);
    let mut out = String::with_capacity(base.len() + 64);
    let mut line = 0;
    for p in &taken {
        for l in &lines[line..p.start] {
            out.push_str(l);
        }
        push_segment(&mut out, &segments[p.segment], p.end < lines.len() || lines[p.end - 1].ends_with('\n'));
        line = p.end;
    }
    for l in &lines[line..] {
        out.push_str(l);
    }
    overflow.sort_unstable();
    for si in overflow {
        if !out.is_empty() && !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&segments[si]);
    }
    (out, taken)
}

fn push_segment(out: &mut String, seg: &str, needs_newline: bool) {
    out.push_str(seg);
    if needs_newline && !seg.ends_with('\n') {
        out.push('\n');
    }
}

/// Splits the completion into `segments` pieces at newlines and writes them
/// over disjoint runs of context lines.
pub fn leak_transform<R: Rng + ?Sized>(
    base_context: &str,
    completion_content: &str,
    segments: usize,
    rng: &mut R,
    tok: &dyn Tokenizer,
) -> String {
    let segs = split_at_random_newlines(completion_content, segments.max(1), rng);
    place_segments(base_context, &segs, rng, tok).0
}

/// Replaces each id with probability `p` by a different, uniformly drawn
/// non-special id. Returns the new ids and the number replaced.
pub fn corrupt_tokens<R: Rng + ?Sized>(
    ids: &[TokenId],
    p: f64,
    rng: &mut R,
    tok: &dyn Tokenizer,
) -> (Vec<TokenId>, usize) {
    let pool = tok.non_special_ids();
    let mut replaced = 0;
    let out = ids
        .iter()
        .map(|&id| {
            if pool.len() < 2 || rng.gen::<f64>() >= p {
                return id;
            }
            replaced += 1;
            match pool.binary_search(&id) {
                // Draw from the pool minus the original id.
                Ok(pos) => {
                    let k = rng.gen_range(0..pool.len() - 1);
                    pool[if k >= pos { k + 1 } else { k }]
                }
                Err(_) => pool[rng.gen_range(0..pool.len())],
            }
        })
        .collect();
    (out, replaced)
}

/// Leaks overlapping five-line windows of the completion into the context,
/// then corrupts every context token with probability `mask_p`.
pub fn masked_leak_transform<R: Rng + ?Sized>(
    base_context: &str,
    completion_content: &str,
    mask_p: f64,
    rng: &mut R,
    tok: &dyn Tokenizer,
) -> String {
    let segs = masked_segments(completion_content);
    let (leaked, _) = place_segments(base_context, &segs, rng, tok);
    let (ids, _) = corrupt_tokens(&tok.encode(&leaked), mask_p, rng, tok);
    tok.decode(&ids)
}

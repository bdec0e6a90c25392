//! Training-mode packing, evaluation-mode truncation and the packed dataset
//! formats (JSONL and a length-prefixed binary variant).

use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::tokenizer::{TokenId, Tokenizer};

/// Budget limits applied when packing training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub total_max: usize,
    pub completion_max: usize,
    /// Minimum context:completion token ratio for non-empty contexts.
    pub min_ratio: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self {
            total_max: 16384,
            completion_max: 4096,
            min_ratio: 3,
        }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.total_max == 0 || self.completion_max == 0 {
            return Err(ConfigError::Invalid("token limits must be positive".into()));
        }
        if self.completion_max > self.total_max {
            return Err(ConfigError::Invalid(format!(
                "completion_max {} exceeds total_max {}",
                self.completion_max, self.total_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Loss on completion tokens only.
    #[default]
    Completion,
    /// Loss on every token.
    Full,
}

impl FromStr for MaskMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "completion" => Ok(MaskMode::Completion),
            "full" => Ok(MaskMode::Full),
            other => Err(ConfigError::Invalid(format!("unknown mask mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedExample {
    pub example_id: String,
    pub input_ids: Vec<TokenId>,
    pub loss_mask: Vec<u8>,
    pub context_len: usize,
    pub completion_len: usize,
}

impl PackedExample {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }
}

/// Why an example was left out of a packed dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub example_id: String,
    pub reason: String,
}

/// Context and completion token counts after applying `policy` to inputs of
/// `context_tokens` and `completion_tokens` ids.
pub fn truncated_lengths(context_tokens: usize, completion_tokens: usize, policy: &TruncationPolicy) -> (usize, usize) {
    let mut c = completion_tokens.min(policy.completion_max).min(policy.total_max);
    let mut k = context_tokens.min(policy.total_max - c);
    if k > 0 && policy.min_ratio > 0 && k < policy.min_ratio * c {
        c = k / policy.min_ratio;
        k = context_tokens.min(policy.total_max - c);
    }
    (k, c)
}

/// Tokenizes context and completion independently, keeps the context's
/// suffix and the completion's prefix, and emits the loss mask.
pub fn pack_training_example(
    example_id: &str,
    context: &str,
    completion: &str,
    policy: &TruncationPolicy,
    mask: MaskMode,
    tok: &dyn Tokenizer,
) -> Result<PackedExample, SkipRecord> {
    let ctx = tok.encode(context);
    let comp = tok.encode(completion);
    pack_ids(example_id, &ctx, &comp, policy, mask)
}

/// [`pack_training_example`] over pre-tokenized ids.
pub fn pack_ids(
    example_id: &str,
    context: &[TokenId],
    completion: &[TokenId],
    policy: &TruncationPolicy,
    mask: MaskMode,
) -> Result<PackedExample, SkipRecord> {
    let (k, c) = truncated_lengths(context.len(), completion.len(), policy);
    if c == 0 {
        return Err(SkipRecord {
            example_id: example_id.to_string(),
            reason: if completion.is_empty() {
                "empty completion".to_string()
            } else {
                format!("completion truncated to zero tokens (context {} tokens)", k)
            },
        });
    }
    let mut input_ids = Vec::with_capacity(k + c);
    input_ids.extend_from_slice(&context[context.len() - k..]);
    input_ids.extend_from_slice(&completion[..c]);
    let context_bit = match mask {
        MaskMode::Completion => 0,
        MaskMode::Full => 1,
    };
    let mut loss_mask = vec![context_bit; k];
    loss_mask.resize(k + c, 1);
    Ok(PackedExample {
        example_id: example_id.to_string(),
        input_ids,
        loss_mask,
        context_len: k,
        completion_len: c,
    })
}

/// Encodes `context ++ completion_prefix` and keeps the last `max_seq_len` ids.
pub fn prepare_eval_sequence(context: &str, completion_prefix: &str, max_seq_len: usize, tok: &dyn Tokenizer) -> Vec<TokenId> {
    let mut text = String::with_capacity(context.len() + completion_prefix.len());
    text.push_str(context);
    text.push_str(completion_prefix);
    let mut ids = tok.encode(&text);
    if ids.len() > max_seq_len {
        ids.drain(..ids.len() - max_seq_len);
    }
    ids
}

/// One line of the packed JSONL dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedRow {
    pub example_id: String,
    pub input_ids: Vec<TokenId>,
    pub loss_mask: Vec<u8>,
    pub context_len: usize,
    pub completion_len: usize,
    pub tokenizer: String,
}

impl PackedRow {
    pub fn new(example: PackedExample, tokenizer: &str) -> Self {
        Self {
            example_id: example.example_id,
            input_ids: example.input_ids,
            loss_mask: example.loss_mask,
            context_len: example.context_len,
            completion_len: example.completion_len,
            tokenizer: tokenizer.to_string(),
        }
    }
}

/// Magic bytes opening a binary packed file, followed by a little-endian u32 version.
pub const BINARY_MAGIC: &[u8; 8] = b"RCPACK\0\0";
pub const BINARY_VERSION: u32 = 1;

/// Writes packed rows as length-prefixed little-endian records in the JSONL
/// field order: example_id, input_ids, loss_mask, context_len,
/// completion_len, tokenizer. Strings and arrays carry a u32 length prefix;
/// ids are u32, mask bits u8, lengths u64.
pub struct BinaryWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinaryWriter<W> {
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(BINARY_MAGIC)?;
        inner.write_all(&BINARY_VERSION.to_le_bytes())?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &PackedRow) -> io::Result<()> {
        let w = &mut self.inner;
        write_str(w, &row.example_id)?;
        write_len(w, row.input_ids.len())?;
        for id in &row.input_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        write_len(w, row.loss_mask.len())?;
        w.write_all(&row.loss_mask)?;
        w.write_all(&(row.context_len as u64).to_le_bytes())?;
        w.write_all(&(row.completion_len as u64).to_le_bytes())?;
        write_str(w, &row.tokenizer)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

fn write_len<W: Write>(w: &mut W, n: usize) -> io::Result<()> {
    let n = u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "field longer than u32::MAX"))?;
    w.write_all(&n.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_len(w, s.len())?;
    w.write_all(s.as_bytes())
}

/// Streaming reader for files produced by [`BinaryWriter`].
pub struct BinaryReader<R: Read> {
    inner: R,
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        inner.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(invalid("not a packed binary file"));
        }
        let version = read_u32(&mut inner)?;
        if version != BINARY_VERSION {
            return Err(invalid(&format!("unsupported binary version {version}")));
        }
        Ok(Self { inner })
    }

    /// Next row, or `None` at a clean end of file.
    pub fn read_row(&mut self) -> io::Result<Option<PackedRow>> {
        let mut first = [0u8; 4];
        if !read_exact_or_eof(&mut self.inner, &mut first)? {
            return Ok(None);
        }
        let r = &mut self.inner;
        let example_id = read_string(r, u32::from_le_bytes(first) as usize)?;
        let n = read_u32(r)? as usize;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let input_ids = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let m = read_u32(r)? as usize;
        let mut loss_mask = vec![0u8; m];
        r.read_exact(&mut loss_mask)?;
        let context_len = read_u64(r)? as usize;
        let completion_len = read_u64(r)? as usize;
        let tn = read_u32(r)? as usize;
        let tokenizer = read_string(r, tn)?;
        Ok(Some(PackedRow {
            example_id,
            input_ids,
            loss_mask,
            context_len,
            completion_len,
            tokenizer,
        }))
    }
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = io::Result<PackedRow>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_row().transpose()
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated record")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, n: usize) -> io::Result<String> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| invalid("string field is not UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::ByteTokenizer;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<TokenId> {
        (0..n as TokenId).map(|i| i % 200).collect()
    }

    fn pack(k: usize, c: usize) -> PackedExample {
        pack_ids("x", &ids(k), &ids(c), &TruncationPolicy::default(), MaskMode::Completion).unwrap()
    }

    #[test]
    fn small_example_is_untouched() {
        let p = pack(100, 10);
        assert_eq!((p.context_len, p.completion_len), (100, 10));
        assert_eq!(p.loss_mask.iter().filter(|&&b| b == 1).count(), 10);
        assert_eq!(&p.loss_mask[..100], &[0u8; 100][..]);
    }

    #[test]
    fn long_inputs_hit_both_limits() {
        let p = pack(20_000, 5_000);
        assert_eq!((p.context_len, p.completion_len), (12_288, 4_096));
        assert_eq!(p.len(), 16_384);
        // Context keeps its suffix, completion its prefix.
        let ctx = ids(20_000);
        assert_eq!(&p.input_ids[..12_288], &ctx[20_000 - 12_288..]);
        assert_eq!(&p.input_ids[12_288..], &ids(5_000)[..4_096]);
    }

    #[test]
    fn short_context_shrinks_completion() {
        let p = pack(6, 10);
        assert_eq!((p.context_len, p.completion_len), (6, 2));
    }

    #[test]
    fn empty_context_has_no_ratio_constraint() {
        let p = pack(0, 10);
        assert_eq!((p.context_len, p.completion_len), (0, 10));
    }

    #[test]
    fn tiny_context_skips_example() {
        let err = pack_ids("e", &ids(2), &ids(10), &TruncationPolicy::default(), MaskMode::Completion).unwrap_err();
        assert_eq!(err.example_id, "e");
        assert!(pack_ids("e", &ids(5), &[], &TruncationPolicy::default(), MaskMode::Completion).is_err());
    }

    #[test]
    fn full_mask_is_all_ones() {
        let p = pack_ids("x", &ids(30), &ids(10), &TruncationPolicy::default(), MaskMode::Full).unwrap();
        assert!(p.loss_mask.iter().all(|&b| b == 1));
        assert_eq!(p.completion_len, 10);
    }

    #[test]
    fn text_packing_uses_tokenizer() {
        let p = pack_training_example("x", "abcdef", "<file_sep>gh", &TruncationPolicy::default(), MaskMode::Completion, &ByteTokenizer).unwrap();
        // 6 context tokens allow at most 2 completion tokens at 3:1.
        assert_eq!(p.input_ids, vec![97, 98, 99, 100, 101, 102, 256, 103]);
    }

    #[test]
    fn eval_sequence_keeps_suffix() {
        let t = ByteTokenizer;
        assert_eq!(prepare_eval_sequence("ab", "cd", 16, &t), vec![97, 98, 99, 100]);
        assert_eq!(prepare_eval_sequence("ab", "cd", 3, &t), vec![98, 99, 100]);
        let prefix = "x".repeat(5000);
        assert_eq!(prepare_eval_sequence("", &prefix, 4096, &t).len(), 4096);
        let long = "y".repeat(20_000);
        let seq = prepare_eval_sequence(&long, "z", 16_384, &t);
        assert_eq!(seq.len(), 16_384);
        assert_eq!(*seq.last().unwrap(), b'z' as TokenId);
    }

    #[test]
    fn binary_round_trip() {
        let rows: Vec<PackedRow> = [pack(5, 3), pack(0, 7)]
            .into_iter()
            .map(|p| PackedRow::new(p, "reference"))
            .collect();
        let mut w = BinaryWriter::new(Vec::new()).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        let buf = w.into_inner();
        let back: Vec<PackedRow> = BinaryReader::new(&buf[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, rows);
        assert!(BinaryReader::new(&buf[..buf.len() - 1]).unwrap().nth(1).unwrap().is_err());
        assert!(BinaryReader::new(&b"garbage!\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn packing_invariants(k in 0usize..40_000, c in 0usize..10_000) {
            let policy = TruncationPolicy::default();
            let (kk, cc) = truncated_lengths(k, c, &policy);
            prop_assert!(kk + cc <= policy.total_max);
            prop_assert!(cc <= policy.completion_max);
            prop_assert!(kk <= k && cc <= c);
            if kk > 0 && cc > 0 {
                prop_assert!(kk >= policy.min_ratio * cc);
            }
        }
    }
}

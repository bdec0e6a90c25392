//! Tokenizer abstraction plus the byte-level reference implementation and a
//! subprocess adapter for external tokenizers.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub type TokenId = u32;

/// Separator placed in front of every formatted file.
pub const FILE_SEP: &str = "<file_sep>";

/// Lossless text tokenizer. Implementations must be usable from many threads.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;

    fn encode(&self, text: &str) -> Vec<TokenId>;

    /// Decodes ids to text. Must satisfy `decode(encode(s)) == s`; for id
    /// sequences that are not valid text the result may be lossy.
    fn decode(&self, ids: &[TokenId]) -> String;

    /// Decodes only if the ids round-trip exactly.
    fn decode_exact(&self, ids: &[TokenId]) -> Option<String> {
        let text = self.decode(ids);
        (self.encode(&text) == ids).then_some(text)
    }

    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }

    fn vocab_size(&self) -> usize;

    /// Sorted ids of special tokens, including [`Tokenizer::file_sep_id`].
    fn special_ids(&self) -> &[TokenId];

    fn file_sep_id(&self) -> TokenId;

    fn is_special(&self, id: TokenId) -> bool {
        self.special_ids().binary_search(&id).is_ok()
    }

    /// Every id that is not special, ascending.
    fn non_special_ids(&self) -> Vec<TokenId> {
        (0..self.vocab_size() as TokenId)
            .filter(|id| !self.is_special(*id))
            .collect()
    }
}

/// Byte-level tokenizer: one id per byte (0..=255) and `<file_sep>` as id 256.
#[derive(Debug, Clone, Default)]
pub struct ByteTokenizer;

const BYTE_FILE_SEP_ID: TokenId = 256;
const BYTE_SPECIALS: [TokenId; 1] = [BYTE_FILE_SEP_ID];

pub fn reference_tokenizer() -> ByteTokenizer {
    ByteTokenizer
}

impl Tokenizer for ByteTokenizer {
    fn name(&self) -> &str {
        "reference"
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let sep = FILE_SEP.as_bytes();
        let mut ids = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'<' && bytes[i..].starts_with(sep) {
                ids.push(BYTE_FILE_SEP_ID);
                i += sep.len();
            } else {
                ids.push(bytes[i] as TokenId);
                i += 1;
            }
        }
        ids
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.to_bytes(ids)).into_owned()
    }

    fn decode_exact(&self, ids: &[TokenId]) -> Option<String> {
        if ids.iter().any(|&id| id > BYTE_FILE_SEP_ID) {
            return None;
        }
        let text = String::from_utf8(self.to_bytes(ids)).ok()?;
        // Bytes spelling "<file_sep>" would re-encode as the special id.
        let reencodes = ids.len() == self.count(&text);
        reencodes.then_some(text)
    }

    fn count(&self, text: &str) -> usize {
        let seps = text.matches(FILE_SEP).count();
        text.len() - seps * (FILE_SEP.len() - 1)
    }

    fn vocab_size(&self) -> usize {
        257
    }

    fn special_ids(&self) -> &[TokenId] {
        &BYTE_SPECIALS
    }

    fn file_sep_id(&self) -> TokenId {
        BYTE_FILE_SEP_ID
    }
}

impl ByteTokenizer {
    fn to_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                BYTE_FILE_SEP_ID => bytes.extend_from_slice(FILE_SEP.as_bytes()),
                b if b < 256 => bytes.push(b as u8),
                _ => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
            }
        }
        bytes
    }
}

/// Longest token suffix of `text` with at most `max_tokens` ids that decodes
/// back to text exactly. Returns the text and its token count.
///
/// With the reference tokenizer the suffix is exactly `max_tokens` long unless
/// the cut would split a multi-byte character.
pub fn left_truncate_text(tok: &dyn Tokenizer, text: &str, max_tokens: usize) -> (String, usize) {
    let ids = tok.encode(text);
    if ids.len() <= max_tokens {
        return (text.to_string(), ids.len());
    }
    let mut start = ids.len() - max_tokens;
    while start < ids.len() {
        if let Some(s) = tok.decode_exact(&ids[start..]) {
            return (s, ids.len() - start);
        }
        start += 1;
    }
    (String::new(), 0)
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum ExternalRequest<'a> {
    Info,
    Encode { text: &'a str },
    Decode { ids: &'a [TokenId] },
}

#[derive(Deserialize)]
struct ExternalInfo {
    #[serde(default)]
    name: Option<String>,
    vocab_size: usize,
    special_ids: Vec<TokenId>,
    file_sep_id: TokenId,
}

#[derive(Deserialize)]
struct EncodeReply {
    ids: Vec<TokenId>,
}

#[derive(Deserialize)]
struct DecodeReply {
    text: String,
}

struct ExternalIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Tokenizer served by a long-running subprocess speaking line-delimited JSON.
///
/// Requests are `{"op":"info"}`, `{"op":"encode","text":..}` and
/// `{"op":"decode","ids":[..]}`; replies are one JSON object per line
/// (`{"vocab_size","special_ids","file_sep_id","name"?}`, `{"ids"}`, `{"text"}`).
pub struct ExternalTokenizer {
    name: String,
    vocab_size: usize,
    special_ids: Vec<TokenId>,
    file_sep_id: TokenId,
    io: Mutex<ExternalIo>,
}

impl ExternalTokenizer {
    pub fn spawn(cmd: &str) -> Result<Self, ConfigError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ConfigError::Invalid(format!("cannot start tokenizer {cmd:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut io = ExternalIo { child, stdin, stdout };
        let info: ExternalInfo = roundtrip(&mut io, &ExternalRequest::Info)
            .map_err(|e| ConfigError::Invalid(format!("tokenizer {cmd:?} info failed: {e}")))?;
        let mut special_ids = info.special_ids;
        special_ids.sort_unstable();
        special_ids.dedup();
        if special_ids.binary_search(&info.file_sep_id).is_err() {
            special_ids.push(info.file_sep_id);
            special_ids.sort_unstable();
        }
        Ok(Self {
            name: info.name.unwrap_or_else(|| format!("external:{cmd}")),
            vocab_size: info.vocab_size,
            special_ids,
            file_sep_id: info.file_sep_id,
            io: Mutex::new(io),
        })
    }

    fn call<T: for<'de> Deserialize<'de>>(&self, req: &ExternalRequest<'_>) -> T {
        let mut io = self.io.lock().unwrap_or_else(|p| p.into_inner());
        // The trait is infallible; a dead tokenizer process is unrecoverable.
        roundtrip(&mut io, req).unwrap_or_else(|e| panic!("external tokenizer {}: {e}", self.name))
    }
}

fn roundtrip<T: for<'de> Deserialize<'de>>(
    io: &mut ExternalIo,
    req: &ExternalRequest<'_>,
) -> Result<T, String> {
    let mut line = serde_json::to_string(req).map_err(|e| e.to_string())?;
    line.push('\n');
    io.stdin.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
    io.stdin.flush().map_err(|e| e.to_string())?;
    let mut reply = String::new();
    let n = io.stdout.read_line(&mut reply).map_err(|e| e.to_string())?;
    if n == 0 {
        return Err("process closed its output".to_string());
    }
    serde_json::from_str(&reply).map_err(|e| format!("bad reply {reply:?}: {e}"))
}

impl Drop for ExternalTokenizer {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

impl Tokenizer for ExternalTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        self.call::<EncodeReply>(&ExternalRequest::Encode { text }).ids
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        self.call::<DecodeReply>(&ExternalRequest::Decode { ids }).text
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn special_ids(&self) -> &[TokenId] {
        &self.special_ids
    }

    fn file_sep_id(&self) -> TokenId {
        self.file_sep_id
    }
}

/// Resolves a `--tokenizer` value: `reference` or `external:<cmd>`.
pub fn tokenizer_from_arg(arg: &str) -> Result<Box<dyn Tokenizer>, ConfigError> {
    if arg == "reference" {
        Ok(Box::new(ByteTokenizer))
    } else if let Some(cmd) = arg.strip_prefix("external:") {
        Ok(Box::new(ExternalTokenizer::spawn(cmd)?))
    } else {
        Err(ConfigError::Invalid(format!(
            "unknown tokenizer {arg:?}; expected `reference` or `external:<cmd>`"
        )))
    }
}

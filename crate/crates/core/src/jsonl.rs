//! Line-by-line JSONL reading and writing, plus the run manifest written next
//! to every output file.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::InputError;

/// Streams typed records out of a JSONL file, skipping blank lines.
pub struct JsonlReader<T> {
    path: String,
    reader: Box<dyn BufRead>,
    line_no: usize,
    buf: String,
    _marker: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: &Path) -> Result<Self, InputError> {
        let file = File::open(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_reader(path.display().to_string(), BufReader::with_capacity(1 << 20, file)))
    }

    pub fn from_reader(name: impl Into<String>, reader: impl BufRead + 'static) -> Self {
        Self {
            path: name.into(),
            reader: Box::new(reader),
            line_no: 0,
            buf: String::new(),
            _marker: PhantomData,
        }
    }

    /// 1-based number of the last line read.
    pub fn line_no(&self) -> usize {
        self.line_no
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T, InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(InputError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            }
            self.line_no += 1;
            if self.buf.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&self.buf).map_err(|e| InputError::Schema {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }));
        }
    }
}

/// Non-blank lines of a file with their 1-based line numbers, unparsed.
pub struct LineReader {
    path: String,
    reader: Box<dyn BufRead>,
    line_no: usize,
}

impl LineReader {
    pub fn open(path: &Path) -> Result<Self, InputError> {
        let file = File::open(path).map_err(|source| InputError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            path: path.display().to_string(),
            reader: Box::new(BufReader::with_capacity(1 << 20, file)),
            line_no: 0,
        })
    }

    /// Parses a line previously returned by this reader.
    pub fn parse<T: DeserializeOwned>(&self, line_no: usize, line: &str) -> Result<T, InputError> {
        serde_json::from_str(line).map_err(|e| InputError::Schema {
            path: self.path.clone(),
            line: line_no,
            message: e.to_string(),
        })
    }
}

impl Iterator for LineReader {
    type Item = Result<(usize, String), InputError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let mut buf = String::new();
            match self.reader.read_line(&mut buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(source) => {
                    return Some(Err(InputError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            }
            self.line_no += 1;
            if !buf.trim().is_empty() {
                return Some(Ok((self.line_no, buf)));
            }
        }
    }
}

/// Buffered JSONL writer.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
    rows: u64,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::with_capacity(1 << 20, File::create(path)?),
            rows: 0,
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n")?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finish(mut self) -> io::Result<u64> {
        self.out.flush()?;
        Ok(self.rows)
    }
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce one output file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub output: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub tokenizer: Option<String>,
    pub config: serde_json::Value,
    pub counts: serde_json::Value,
    /// Sum of `input_ids` lengths for packed datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
}

impl Manifest {
    pub fn new(command: &str, output: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            output: output.display().to_string(),
            inputs: Vec::new(),
            seed: None,
            tokenizer: None,
            config: serde_json::Value::Null,
            counts: serde_json::Value::Null,
            total_tokens: None,
        }
    }
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_manifest(manifest: &Manifest, output: &Path) -> io::Result<PathBuf> {
    let path = manifest_path(output);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

pub fn read_manifest(output: &Path) -> Result<Manifest, InputError> {
    let path = manifest_path(output);
    let text = std::fs::read_to_string(&path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| InputError::Schema {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

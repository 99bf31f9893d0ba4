//! Streaming JSONL input/output and the generated-record schema.
//!
//! Readers yield one record at a time off a buffered line reader, so
//! arbitrarily large suite files can be scanned without holding them in
//! memory. Writers emit one compact JSON object per line, `\n`-terminated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Per-record generation metadata carried in every suite record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// Token budget the example was generated against.
    pub budget: usize,
    /// Additively accounted token length of prompt + target SQL.
    pub accounted_length: usize,
    /// Post-hoc recount of the assembled prompt + target SQL, when
    /// verification ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retokenized_length: Option<usize>,
    /// Tables in the final prompt (originals + distractors).
    pub n_tables: usize,
    /// Distractor tables added from the pool.
    pub n_distractors: usize,
    /// Seed governing this record's randomness.
    pub seed: u64,
    /// Token counter id used for all accounting.
    pub tokenizer: String,
    /// Requested placement offset; placement suites only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_target: Option<usize>,
    /// Measured tokens before the first original schema item; placement
    /// suites only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_actual: Option<usize>,
    /// True when the example was emitted unaugmented because its original
    /// prompt already met or exceeded the budget.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub passthrough: bool,
}

/// One generated example, as written to suite JSONL files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteRecord {
    pub id: String,
    pub dataset: String,
    pub db_id: String,
    pub prompt: String,
    pub target_sql: String,
    pub meta: RecordMeta,
}

/// One model prediction, as read from a predictions JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub sql: String,
}

/// Writes records to `path`, one JSON object per line.
pub fn write_jsonl<T: Serialize>(
    path: &Path,
    records: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut writer = JsonlWriter::create(path)?;
    for record in records {
        writer.write(&record)?;
    }
    writer.finish()
}

/// Incremental JSONL writer over a buffered file handle.
pub struct JsonlWriter {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::json(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a whole JSONL file into memory. Convenience for small files; use
/// [`read_jsonl_iter`] to stream large ones.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_iter(path)?.collect()
}

/// Opens `path` and yields records lazily, one line at a time.
pub fn read_jsonl_iter<T: DeserializeOwned>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(stream_jsonl(BufReader::new(file), path))
}

/// Streams records from any buffered reader; `origin` labels errors.
pub fn stream_jsonl<R: BufRead, T: DeserializeOwned>(
    reader: R,
    origin: &Path,
) -> impl Iterator<Item = Result<T>> {
    let origin = origin.to_path_buf();
    reader.lines().filter_map(move |line| match line {
        Err(e) => Some(Err(Error::io(&origin, e))),
        Ok(line) if line.trim().is_empty() => None,
        Ok(line) => Some(serde_json::from_str(&line).map_err(|e| Error::json(&origin, e))),
    })
}

/// SHA-256 of a file's bytes, lowercase hex. Used for manifests and
/// determinism checks.
pub fn sha256_hex_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_lower(&hasher.finalize()))
}

/// SHA-256 of an in-memory byte string, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_lower(&Sha256::digest(bytes))
}

fn hex_lower(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

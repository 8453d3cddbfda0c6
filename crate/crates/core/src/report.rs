//! Structured warning and event records, written one JSON object per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: String,
    pub kind: String,
    /// Where the problem was found: a volume, segment id, TSV row, ...
    pub location: String,
    pub message: String,
}

impl Warning {
    pub fn new(stage: &str, kind: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            kind: kind.to_string(),
            location: location.into(),
            message: message.into(),
        }
    }
}

/// Writes `items` as JSON lines. An empty slice produces an empty file.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), n + 1),
            )
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Single-line JSON with a trailing newline, for large artifacts.
pub fn write_json_compact<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
}

/// Serializes with a trailing newline; used for every JSON artifact so that
/// reruns are byte-identical.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
}

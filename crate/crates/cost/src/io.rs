//! JSONL record files, atomic writes and content hashes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use cost_core::model::{parse_record, serialize_record, DatasetRecord, ModelError};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        source: ModelError,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    // Temporary files are created 0600; outputs should read like any other file.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = fs::metadata(path).map(|m| m.permissions().mode()).unwrap_or(0o644);
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(mode))
            .map_err(|e| IoError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn append_line(path: &Path, line: &str) -> Result<(), IoError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| IoError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| IoError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, IoError> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| IoError::io(path, e))
}

/// Renders records as canonical JSONL.
pub fn records_to_jsonl(records: &[DatasetRecord]) -> Result<String, ModelError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_record(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), IoError> {
    let text = records_to_jsonl(records).map_err(|source| IoError::Record {
        path: path.to_path_buf(),
        line: 0,
        source,
    })?;
    write_atomic(path, text.as_bytes())
}

/// Parses every non-blank line; the first bad line is an error.
pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, IoError> {
    let text = read_text(path)?;
    parse_jsonl(&text).map_err(|(line, source)| IoError::Record {
        path: path.to_path_buf(),
        line,
        source,
    })
}

pub fn parse_jsonl(text: &str) -> Result<Vec<DatasetRecord>, (usize, ModelError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record(l).map_err(|e| (i + 1, e)))
        .collect()
}

/// Serializes `value` as canonical JSON lines, one per item.
pub fn to_json_lines<T: serde::Serialize>(items: &[T]) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for item in items {
        out.push_str(&cost_core::model::to_canonical_json(item)?);
        out.push('\n');
    }
    Ok(out)
}

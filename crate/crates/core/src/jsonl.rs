//! JSON-lines helpers shared by the event log, the feedback ledger and datasets.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Records of the longest valid prefix of a JSON-lines file.
#[derive(Debug)]
pub struct Prefix<T> {
    pub records: Vec<T>,
    /// Byte length of the valid prefix, including its trailing newline.
    pub valid_bytes: u64,
    /// Lines from the first unparsable one to the end of the file.
    pub skipped_lines: usize,
}

/// Parses records until the first line that fails to parse or lacks a
/// terminating newline. A missing file is an empty prefix.
pub fn read_prefix<T: DeserializeOwned>(path: &Path) -> io::Result<Prefix<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e),
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut rest = text.as_str();
    while !rest.is_empty() {
        let Some(nl) = rest.find('\n') else { break };
        let line = &rest[..nl];
        if !line.trim().is_empty() {
            match serde_json::from_str(line) {
                Ok(r) => records.push(r),
                Err(_) => break,
            }
        }
        offset += nl + 1;
        rest = &rest[nl + 1..];
    }
    let skipped_lines = text[offset..].lines().count();
    Ok(Prefix {
        records,
        valid_bytes: offset as u64,
        skipped_lines,
    })
}

/// Opens `path` for appending after discarding anything past `valid_bytes`.
pub fn open_append_at(path: &Path, valid_bytes: u64) -> io::Result<File> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    if file.metadata()?.len() > valid_bytes {
        file.set_len(valid_bytes)?;
    }
    Ok(file)
}

pub fn to_line<T: Serialize>(record: &T) -> serde_json::Result<String> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    Ok(line)
}

pub fn append<T: Serialize>(file: &mut File, record: &T) -> io::Result<()> {
    file.write_all(to_line(record)?.as_bytes())?;
    file.flush()
}

pub fn write_all<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_line(r)?);
    }
    fs::write(path, out)
}

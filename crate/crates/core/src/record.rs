//! Line-delimited record serialization.
//!
//! Every persistent artifact (rollouts, preference pairs, task specs, policy
//! checkpoints) is stored as one JSON object per line with explicit field
//! names. Records are validated against their type invariants on both write
//! and read, unknown fields are rejected, and `deserialize(serialize(x)) == x`
//! bit-exactly for every valid record.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// A type-invariant violation detected while writing or reading a record.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invariant violation: {0}")]
pub struct InvariantError(String);

impl InvariantError {
    pub fn new(msg: String) -> Self {
        Self(msg)
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    /// `offset` is the byte offset of the malformed content; for multi-line
    /// sources it is absolute within the stream.
    #[error("malformed record at byte offset {offset}: {detail}")]
    Parse { offset: usize, detail: String },
    #[error("record io: {0}")]
    Io(#[from] std::io::Error),
}

/// A core type that participates in the record format.
pub trait Record: Serialize + DeserializeOwned {
    /// Check the type's invariants; called on write and after every read.
    fn validate(&self) -> Result<(), InvariantError>;
}

/// Serialize one record to a single line (no trailing newline).
pub fn serialize_record<T: Record>(record: &T) -> Result<String, RecordError> {
    record.validate()?;
    let line = serde_json::to_string(record).map_err(|e| RecordError::Parse {
        offset: 0,
        detail: e.to_string(),
    })?;
    debug_assert!(!line.contains('\n'));
    Ok(line)
}

/// Parse one record from a single line.
pub fn deserialize_record<T: Record>(line: &str) -> Result<T, RecordError> {
    let record: T = serde_json::from_str(line).map_err(|e| RecordError::Parse {
        // serde_json columns are 1-based; single-line input makes the
        // column directly convertible to a byte offset.
        offset: e.column().saturating_sub(1),
        detail: e.to_string(),
    })?;
    record.validate()?;
    Ok(record)
}

/// Write records line by line.
pub fn write_records<'a, T: Record + 'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<usize, RecordError> {
    let mut n = 0;
    for r in records {
        let line = serialize_record(r)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

/// Read all records from a buffered reader. Parse errors carry the absolute
/// byte offset of the offending content; empty lines are skipped.
pub fn read_records<T: Record, R: BufRead>(reader: R) -> Result<Vec<T>, RecordError> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let record = deserialize_record::<T>(&line).map_err(|e| match e {
                RecordError::Parse {
                    offset: col,
                    detail,
                } => RecordError::Parse {
                    offset: offset + col,
                    detail,
                },
                other => other,
            })?;
            out.push(record);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Convenience: read records from a file path.
pub fn read_records_file<T: Record>(path: &std::path::Path) -> Result<Vec<T>, RecordError> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file))
}

/// Convenience: write records to a file path.
pub fn write_records_file<'a, T: Record + 'a>(
    path: &std::path::Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<usize, RecordError> {
    let file = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), records)
}

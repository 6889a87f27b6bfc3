//! One JSON object per line: `{"times": [...], "events": [...], "label": n}`.
//!
//! Floats are written with the shortest representation that parses back to
//! the same `f64`, so save → load is the identity.

use std::io::BufRead;
use std::path::Path;

use super::EventSequence;
use crate::error::{Error, Result};
use crate::fsio;

pub fn parse_event_jsonl(reader: impl BufRead) -> Result<Vec<EventSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: EventSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        seq.validate().map_err(|e| Error::Data(format!("line {lineno}: {e}")))?;
        out.push(seq);
    }
    Ok(out)
}

pub fn load_event_jsonl(path: &Path) -> Result<Vec<EventSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_event_jsonl(std::io::BufReader::new(file))
}

pub fn to_jsonl(seqs: &[EventSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        // serialization of plain data cannot fail
        out.push_str(&serde_json::to_string(s).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Validates every sequence, then writes the file atomically.
pub fn save_event_jsonl(seqs: &[EventSequence], path: &Path) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        s.validate().map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
    }
    fsio::write_atomic(path, to_jsonl(seqs).as_bytes())
}

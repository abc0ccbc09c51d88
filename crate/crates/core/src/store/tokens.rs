//! JSON-lines side files: vocabularies (one JSON string per line, line index
//! = token id) and corpus token streams aligned row-for-row with a `.sact`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One token of a corpus stream. `doc_id` groups tokens into lines; rows of
/// the same line are contiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub doc_id: u64,
    pub token: String,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let item = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vec<String>> {
    read_lines(path)
}

pub fn write_vocab(path: &Path, vocab: &[String]) -> Result<()> {
    write_lines(path, vocab)
}

pub fn read_token_stream(path: &Path) -> Result<Vec<TokenRecord>> {
    read_lines(path)
}

pub fn write_token_stream(path: &Path, tokens: &[TokenRecord]) -> Result<()> {
    write_lines(path, tokens)
}

//! Input validation and header-carrying output files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crsim_core::corpus::{CatalogEntry, CatalogIndex};
use crsim_core::io::{atomic_write, read_jsonl, write_jsonl, Header};

use crate::error::{data, usage, CliError};

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!(
            "{what} `{}` does not exist or is not a file",
            path.display()
        )))
    }
}

/// Creates the parent directory of an output path up front so a bad path
/// fails before any work is done.
pub fn prepare_output(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        return Err(usage(format!("output `{}` is a directory", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| usage(format!("cannot create `{}`: {e}", parent.display())))?;
    }
    Ok(())
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map(|(_, items)| items).map_err(data)
}

pub fn write_lines<T: Serialize>(path: &Path, header: &Header, items: &[T]) -> Result<(), CliError> {
    write_jsonl(path, Some(header), items).map_err(data)
}

/// A JSON document with the header as its first field.
pub fn document(header: &Header, body: &impl Serialize) -> Result<serde_json::Value, CliError> {
    let mut doc = serde_json::Map::new();
    doc.insert("_header".into(), serde_json::to_value(header).map_err(data)?);
    match serde_json::to_value(body).map_err(data)? {
        serde_json::Value::Object(fields) => doc.extend(fields),
        other => {
            doc.insert("result".into(), other);
        }
    }
    Ok(serde_json::Value::Object(doc))
}

pub fn write_document(path: &Path, doc: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(data)?;
    text.push('\n');
    atomic_write(path, text.as_bytes()).map_err(data)
}

pub fn print_document(doc: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(doc).expect("values always serialize")
    );
}

/// Reads a plain or embedding catalog as an id/title index. Embedding
/// vectors and the `{"dimension": N}` header line are ignored.
pub fn load_catalog_index(path: &Path) -> Result<CatalogIndex, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if i == 0 && (value.get("dimension").is_some() || value.get("_header").is_some()) {
            continue;
        }
        let entry: CatalogEntry =
            serde_json::from_value(value).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entries.push(entry);
    }
    Ok(CatalogIndex::new(entries))
}

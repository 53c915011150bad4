//! Line-delimited JSON files with an optional provenance header line.
//!
//! Every file written by the tools starts with a single
//! `{"_header": {...}}` line naming the tool version, the hash of the
//! configuration that produced it and the seed. Timestamps live only in the
//! header, so two runs with the same inputs differ only on that line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_NAME: &str = "crsim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
}

impl Header {
    pub fn new(command: &str, config: &impl Serialize, seed: Option<u64>) -> Header {
        Header {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_hash: config_hash(config),
            seed,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    #[serde(rename = "_header")]
    header: Header,
}

/// Short SHA-256 digest of the JSON form of `config`.
pub fn config_hash(config: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(config).unwrap_or_default();
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// One JSON line, or the reason it could not be decoded.
pub type LineResult<T> = Result<T, (usize, String)>;

pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        JsonlWriter { inner }
    }

    pub fn header(&mut self, header: &Header) -> std::io::Result<()> {
        self.write(&HeaderLine { header: header.clone() })
    }

    pub fn write<T: Serialize + ?Sized>(&mut self, item: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.inner, item)?;
        self.inner.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Reads every line, splitting off the header and keeping per-line decode
/// failures so callers can count and report them.
pub fn read_lines_lenient<T: DeserializeOwned>(
    reader: impl BufRead,
) -> std::io::Result<(Option<Header>, Vec<LineResult<T>>)> {
    let mut header = None;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && line.trim_start().starts_with("{\"_header\"") {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                header = Some(h.header);
                continue;
            }
        }
        out.push(serde_json::from_str::<T>(&line).map_err(|e| (lineno, e.to_string())));
    }
    Ok((header, out))
}

/// Strict reader: the first undecodable line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Header>, Vec<T>), IoError> {
    let file = File::open(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (header, lines) = read_lines_lenient(BufReader::new(file)).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let items = lines
        .into_iter()
        .map(|r| {
            r.map_err(|(line, message)| IoError::Parse {
                path: path.display().to_string(),
                line,
                message,
            })
        })
        .collect::<Result<Vec<T>, IoError>>()?;
    Ok((header, items))
}

pub fn read_jsonl_lenient<T: DeserializeOwned>(path: &Path) -> Result<(Option<Header>, Vec<LineResult<T>>), IoError> {
    let file = File::open(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_lines_lenient(BufReader::new(file)).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `items` to `path` behind an optional header, atomically.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    header: Option<&Header>,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), IoError> {
    let wrap = |source| IoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = JsonlWriter::new(Vec::new());
    if let Some(h) = header {
        w.header(h).map_err(wrap)?;
    }
    for item in items {
        w.write(item).map_err(wrap)?;
    }
    atomic_write(path, &w.into_inner()).map_err(wrap)
}

/// Writes `contents` to a sibling temp file, syncs it, then renames it over
/// `path`. Readers see either the old or the new file, never a torn one.
pub fn atomic_write(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{name}.{}.{n}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: u32,
    }

    #[test]
    fn header_is_split_off_and_bad_lines_reported() {
        let h = Header::new("test", &("cfg", 1), Some(7));
        let mut w = JsonlWriter::new(Vec::new());
        w.header(&h).unwrap();
        w.write(&Row { id: 1 }).unwrap();
        let mut bytes = w.into_inner();
        bytes.extend_from_slice(b"not json\n\n{\"id\":3}\n");
        let (header, rows) = read_lines_lenient::<Row>(&bytes[..]).unwrap();
        assert_eq!(header, Some(h));
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].as_ref().unwrap(), &Row { id: 1 });
        assert_eq!(rows[1].as_ref().unwrap_err().0, 3);
        assert_eq!(rows[2].as_ref().unwrap(), &Row { id: 3 });
    }

    #[test]
    fn config_hash_is_stable() {
        assert_eq!(config_hash(&("a", 1)), config_hash(&("a", 1)));
        assert_ne!(config_hash(&("a", 1)), config_hash(&("a", 2)));
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

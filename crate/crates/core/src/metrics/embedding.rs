//! Item embedding catalog backing the match score.
//!
//! File format: a first line `{"dimension": d}`, then one
//! `{"item_id": ..., "title": ..., "embedding": [d reals]}` per line.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::titles::{normalize_title, TitleMode};
use crate::corpus::{CatalogEntry, CatalogIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub item_id: String,
    pub title: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog is missing its dimension header line")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("item {item_id}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        item_id: String,
        expected: usize,
        found: usize,
    },
    #[error("item {item_id}: embedding has non-finite values")]
    NonFinite { item_id: String },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
struct DimensionHeader {
    dimension: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCatalog {
    dimension: usize,
    entries: Vec<EmbeddingEntry>,
    by_id: HashMap<String, usize>,
    by_strict_title: HashMap<String, Vec<usize>>,
    by_lenient_title: HashMap<String, Vec<usize>>,
}

impl EmbeddingCatalog {
    pub fn new(dimension: usize, entries: Vec<EmbeddingEntry>) -> Result<Self, CatalogError> {
        if dimension == 0 {
            return Err(CatalogError::ZeroDimension);
        }
        let mut by_id = HashMap::new();
        let mut by_strict_title: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_lenient_title: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.embedding.len() != dimension {
                return Err(CatalogError::DimensionMismatch {
                    item_id: e.item_id.clone(),
                    expected: dimension,
                    found: e.embedding.len(),
                });
            }
            if e.embedding.iter().any(|v| !v.is_finite()) {
                return Err(CatalogError::NonFinite {
                    item_id: e.item_id.clone(),
                });
            }
            if by_id.insert(e.item_id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(e.item_id.clone()));
            }
            by_strict_title
                .entry(normalize_title(&e.title, TitleMode::Strict))
                .or_default()
                .push(i);
            by_lenient_title
                .entry(normalize_title(&e.title, TitleMode::Lenient))
                .or_default()
                .push(i);
        }
        Ok(EmbeddingCatalog {
            dimension,
            entries,
            by_id,
            by_strict_title,
            by_lenient_title,
        })
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CatalogError> {
        let mut dimension = None;
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| CatalogError::Parse {
                line: idx + 1,
                message: e.to_string(),
            };
            match dimension {
                None => {
                    let h: DimensionHeader = serde_json::from_str(&line).map_err(|_| CatalogError::MissingHeader)?;
                    dimension = Some(h.dimension);
                }
                Some(_) => entries.push(serde_json::from_str(&line).map_err(parse_err)?),
            }
        }
        EmbeddingCatalog::new(dimension.ok_or(CatalogError::MissingHeader)?, entries)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let f = std::fs::File::open(path)?;
        EmbeddingCatalog::read(std::io::BufReader::new(f))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&EmbeddingEntry> {
        self.by_id.get(item_id).map(|&i| &self.entries[i])
    }

    /// Catalog entries whose title normalizes to the same key as `title`,
    /// in file order.
    pub fn lookup_title(&self, title: &str, mode: TitleMode) -> Vec<&EmbeddingEntry> {
        let map = match mode {
            TitleMode::Strict => &self.by_strict_title,
            TitleMode::Lenient => &self.by_lenient_title,
        };
        map.get(&normalize_title(title, mode))
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[EmbeddingEntry] {
        &self.entries
    }

    pub fn to_index(&self) -> CatalogIndex {
        CatalogIndex::new(self.entries.iter().map(|e| CatalogEntry {
            item_id: e.item_id.clone(),
            title: e.title.clone(),
        }))
    }
}

//! Line-delimited JSON importer for hand-written fixtures.
//!
//! One item per line, in one of three shapes:
//!
//! ```text
//! {"id": "img-1", "prototypes": [[...], [...]]}
//! {"id": "img-1", "rows": 2, "cols": 2, "patches": [[...], ...], "global": [...]}
//! {"id": "rep-1", "sentences": [[...], ...], "global": [...]}
//! ```
//!
//! Blank lines and lines starting with `#` are skipped. All lines of a file
//! must use the same shape.

use std::path::Path;

use serde::Deserialize;

use super::binary::EmbeddingItems;
use crate::error::{Error, Result};
use crate::prototype::{PatchGrid, SentenceSet};
use crate::types::Embedding;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Line {
    Grid {
        id: String,
        rows: usize,
        cols: usize,
        patches: Vec<Vec<f64>>,
        global: Vec<f64>,
    },
    Sentences {
        id: String,
        sentences: Vec<Vec<f64>>,
        global: Vec<f64>,
    },
    Prototypes {
        id: String,
        prototypes: Vec<Vec<f64>>,
    },
}

fn err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message: message.into(),
    }
}

fn embeddings(path: &Path, line: usize, rows: Vec<Vec<f64>>) -> Result<Vec<Embedding>> {
    rows.into_iter()
        .map(|v| Embedding::new(v).map_err(|e| err(path, line, e.to_string())))
        .collect()
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<EmbeddingItems> {
    let mut out: Option<EmbeddingItems> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(trimmed).map_err(|e| err(path, line_no, e.to_string()))?;
        let shape_error = || err(path, line_no, "item shape differs from earlier lines");
        match parsed {
            Line::Grid {
                id,
                rows,
                cols,
                patches,
                global,
            } => {
                let patches = embeddings(path, line_no, patches)?;
                let global =
                    Embedding::new(global).map_err(|e| err(path, line_no, e.to_string()))?;
                let grid = PatchGrid::new(rows, cols, patches, global)
                    .map_err(|e| err(path, line_no, e.to_string()))?;
                match out.get_or_insert_with(|| EmbeddingItems::Grids(Vec::new())) {
                    EmbeddingItems::Grids(v) => v.push((id, grid)),
                    _ => return Err(shape_error()),
                }
            }
            Line::Sentences {
                id,
                sentences,
                global,
            } => {
                let sentences = embeddings(path, line_no, sentences)?;
                let global =
                    Embedding::new(global).map_err(|e| err(path, line_no, e.to_string()))?;
                let set = SentenceSet::new(sentences, global)
                    .map_err(|e| err(path, line_no, e.to_string()))?;
                match out.get_or_insert_with(|| EmbeddingItems::Sentences(Vec::new())) {
                    EmbeddingItems::Sentences(v) => v.push((id, set)),
                    _ => return Err(shape_error()),
                }
            }
            Line::Prototypes { id, prototypes } => {
                let protos = embeddings(path, line_no, prototypes)?;
                match out.get_or_insert_with(|| EmbeddingItems::Prototypes(Vec::new())) {
                    EmbeddingItems::Prototypes(v) => v.push((id, protos)),
                    _ => return Err(shape_error()),
                }
            }
        }
    }
    out.ok_or_else(|| err(path, 0, "file contains no items"))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<EmbeddingItems> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

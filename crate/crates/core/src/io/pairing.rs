//! Ground-truth pairing file: UTF-8, one `report_id<TAB>image_id` edge per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingEdge {
    pub line: usize,
    pub report_id: String,
    pub image_id: String,
}

/// Blank lines and `#` comments are skipped; every other line must have
/// exactly two non-empty tab-separated fields.
pub fn parse_pairing(text: &str) -> Result<Vec<PairingEdge>> {
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.split('\t');
        let (Some(report), Some(image), None) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line,
                message: "expected report_id<TAB>image_id".into(),
            });
        };
        if report.is_empty() || image.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        edges.push(PairingEdge {
            line,
            report_id: report.to_owned(),
            image_id: image.to_owned(),
        });
    }
    Ok(edges)
}

pub fn read_pairing(path: impl AsRef<Path>) -> Result<Vec<PairingEdge>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairing(&text)
}

/// Groups edges by report, checking every id against the known items.
pub fn resolve_pairing<F, G>(
    edges: &[PairingEdge],
    has_report: F,
    has_image: G,
) -> Result<BTreeMap<String, BTreeSet<String>>>
where
    F: Fn(&str) -> bool,
    G: Fn(&str) -> bool,
{
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in edges {
        let missing = match (has_report(&e.report_id), has_image(&e.image_id)) {
            (true, true) => None,
            (false, true) => Some("report"),
            (true, false) => Some("image"),
            (false, false) => Some("report and image"),
        };
        if let Some(missing) = missing {
            return Err(Error::DanglingPairing {
                line: e.line,
                report_id: e.report_id.clone(),
                image_id: e.image_id.clone(),
                missing,
            });
        }
        if !out
            .entry(e.report_id.clone())
            .or_default()
            .insert(e.image_id.clone())
        {
            return Err(Error::Parse {
                line: e.line,
                message: format!("duplicate edge {} -> {}", e.report_id, e.image_id),
            });
        }
    }
    Ok(out)
}

pub fn format_pairing(pairing: &BTreeMap<String, BTreeSet<String>>) -> String {
    let mut out = String::new();
    for (report, images) in pairing {
        for image in images {
            let _ = writeln!(out, "{report}\t{image}");
        }
    }
    out
}

/// `id<TAB>label[<TAB>...]` lines; extra columns are ignored.
pub fn parse_labels(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.split('\t');
        match (fields.next(), fields.next()) {
            (Some(id), Some(label)) if !id.is_empty() && !label.is_empty() => {
                if out.insert(id.to_owned(), label.to_owned()).is_some() {
                    return Err(Error::Parse {
                        line,
                        message: format!("duplicate label for {id:?}"),
                    });
                }
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "expected id<TAB>label".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

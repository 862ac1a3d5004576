//! Weight checkpoints: UTF-8 `key = value` lines.
//!
//! ```text
//! # pecm weight checkpoint
//! format = pecm-weights
//! version = 1
//! k = 3
//! theta = 0.0000000000000000e0, 1.2500000000000000e-1, -1.2500000000000000e-1
//! ```
//!
//! `theta` is written with 17 significant digits, which round-trips every
//! `f64` exactly. Weights are re-derived as `K * softmax(theta)` on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::WeightVector;

const FORMAT: &str = "pecm-weights";

pub fn encode_weights(w: &WeightVector) -> String {
    let mut out = String::from("# pecm weight checkpoint\n");
    let _ = writeln!(out, "format = {FORMAT}");
    let _ = writeln!(out, "version = 1");
    let _ = writeln!(out, "k = {}", w.k());
    let theta: Vec<String> = w.theta().iter().map(|t| format!("{t:.16e}")).collect();
    let _ = writeln!(out, "theta = {}", theta.join(", "));
    out
}

pub fn decode_weights(text: &str, expected_k: Option<usize>) -> Result<WeightVector> {
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: "expected key = value".into(),
        })?;
        if fields.insert(key.trim(), (line, value.trim())).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key {:?}", key.trim()),
            });
        }
    }
    let get = |key: &str| {
        fields.get(key).copied().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing key {key:?}"),
        })
    };

    let (line, format) = get("format")?;
    if format != FORMAT {
        return Err(Error::Parse {
            line,
            message: format!("unknown format {format:?}"),
        });
    }
    let (line, version) = get("version")?;
    if version != "1" {
        return Err(Error::Parse {
            line,
            message: format!("unsupported version {version:?}"),
        });
    }
    let (line, k) = get("k")?;
    let k: usize = k.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid k {k:?}"),
    })?;
    let (line, theta) = get("theta")?;
    let theta = theta
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid theta entry {t:?}"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if theta.len() != k {
        return Err(Error::Parse {
            line,
            message: format!("k = {k} but theta has {} entries", theta.len()),
        });
    }
    if let Some(expected) = expected_k {
        if expected != k {
            return Err(Error::KMismatch { expected, found: k });
        }
    }
    WeightVector::from_theta(theta)
}

pub fn save_weights(w: &WeightVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>, expected_k: Option<usize>) -> Result<WeightVector> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&text, expected_k)
}

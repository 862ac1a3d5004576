//! Reading and writing corpora, pairings, checkpoints and synthetic data.

pub mod binary;
pub mod checkpoint;
pub mod pairing;
pub mod synth;
pub mod text;

use std::path::Path;

use rayon::prelude::*;

pub use binary::{
    read_embedding_file, write_grid_file, write_prototype_file, write_sentence_file,
    EmbeddingFileHeader, EmbeddingItems, Layout, PayloadKind,
};
pub use checkpoint::{load_weights, save_weights};
pub use pairing::{
    format_pairing, parse_labels, parse_pairing, read_labels, read_pairing, PairingEdge,
};
pub use synth::{generate_synthetic, SyntheticCorpus, SyntheticSpec};

use crate::error::{Error, Result};
use crate::prototype::{build_image_prototypes, build_report_prototypes};
use crate::types::{Corpus, Modality, PrototypeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Patch block side used when image files hold raw grids.
    pub group_size: usize,
    /// Prototype count for raw report files; defaults to the image K.
    pub report_k: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            group_size: 3,
            report_k: None,
        }
    }
}

/// `.jsonl` files go through the text importer, everything else is binary.
pub fn read_items(path: impl AsRef<Path>) -> Result<EmbeddingItems> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        text::read_jsonl(path)
    } else {
        Ok(read_embedding_file(path)?.1)
    }
}

fn wrong_kind(path: &Path, expected: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location: "header".into(),
        message: format!("expected {expected}"),
    }
}

fn image_sets(items: EmbeddingItems, path: &Path, opts: &LoadOptions) -> Result<Vec<PrototypeSet>> {
    match items {
        EmbeddingItems::Grids(grids) => grids
            .par_iter()
            .map(|(id, g)| build_image_prototypes(id, g, opts.group_size))
            .collect(),
        EmbeddingItems::Prototypes(p) => p
            .into_iter()
            .map(|(id, protos)| PrototypeSet::new(id, Modality::Image, protos))
            .collect(),
        EmbeddingItems::Sentences(_) => Err(wrong_kind(path, "image grids or prototype sets")),
    }
}

fn report_sets(items: EmbeddingItems, path: &Path, k: usize) -> Result<Vec<PrototypeSet>> {
    match items {
        EmbeddingItems::Sentences(s) => s
            .par_iter()
            .map(|(id, set)| build_report_prototypes(id, set, k))
            .collect(),
        EmbeddingItems::Prototypes(p) => p
            .into_iter()
            .map(|(id, protos)| PrototypeSet::new(id, Modality::Report, protos))
            .collect(),
        EmbeddingItems::Grids(_) => Err(wrong_kind(path, "report sentences or prototype sets")),
    }
}

fn check_uniform(sets: &[PrototypeSet], k: usize, dim: usize) -> Result<()> {
    for s in sets {
        if s.k() != k {
            return Err(Error::MismatchedK {
                expected: k,
                found: s.k(),
            });
        }
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
                context: Some(format!("{} {:?}", s.modality(), s.item_id())),
            });
        }
    }
    Ok(())
}

pub fn load_corpus(
    images: impl AsRef<Path>,
    reports: impl AsRef<Path>,
    pairing: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Corpus> {
    let (images, reports) = (images.as_ref(), reports.as_ref());
    let image_sets = image_sets(read_items(images)?, images, opts)?;
    let first = image_sets
        .first()
        .ok_or_else(|| Error::InvalidCorpus("image file has no items".into()))?;
    let (k, dim) = (first.k(), first.dim());
    check_uniform(&image_sets, k, dim)?;

    let report_sets = report_sets(read_items(reports)?, reports, opts.report_k.unwrap_or(k))?;
    check_uniform(&report_sets, k, dim)?;

    let edges = read_pairing(pairing)?;
    let image_ids: std::collections::HashSet<&str> =
        image_sets.iter().map(|s| s.item_id()).collect();
    let report_ids: std::collections::HashSet<&str> =
        report_sets.iter().map(|s| s.item_id()).collect();
    let map = pairing::resolve_pairing(
        &edges,
        |r| report_ids.contains(r),
        |i| image_ids.contains(i),
    )?;
    drop((image_ids, report_ids));
    Corpus::new(image_sets, report_sets, map)
}

/// Writes prototype-set files for both modalities plus the pairing file.
pub fn save_corpus(
    corpus: &Corpus,
    images: impl AsRef<Path>,
    reports: impl AsRef<Path>,
    pairing: impl AsRef<Path>,
) -> Result<()> {
    write_prototype_file(images, corpus.images().values())?;
    write_prototype_file(reports, corpus.reports().values())?;
    let pairing = pairing.as_ref();
    std::fs::write(pairing, format_pairing(corpus.pairing())).map_err(|e| Error::io(pairing, e))
}

//! Multi-level prototype construction from raw encoder outputs.
//!
//! Images arrive as a row-major patch grid plus a whole-image summary
//! vector; reports arrive as per-sentence embeddings plus a document
//! vector. Both are reduced to `K - 1` mean-pooled regional prototypes
//! followed by the global prototype.

use crate::error::{Error, Result};
use crate::types::{Embedding, Modality, PrototypeSet};

/// Patch embeddings of one image, row-major, plus the global summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    patches: Vec<Embedding>,
    global: Embedding,
}

impl PatchGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        patches: Vec<Embedding>,
        global: Embedding,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "patch grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if patches.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "{rows}x{cols} grid needs {} patches, got {}",
                rows * cols,
                patches.len()
            )));
        }
        let d = global.dim();
        if let Some(p) = patches.iter().find(|p| p.dim() != d) {
            return Err(Error::dim(d, p.dim()));
        }
        Ok(Self {
            rows,
            cols,
            patches,
            global,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patches(&self) -> &[Embedding] {
        &self.patches
    }

    pub fn global(&self) -> &Embedding {
        &self.global
    }

    pub fn patch(&self, row: usize, col: usize) -> &Embedding {
        &self.patches[row * self.cols + col]
    }
}

/// Sentence embeddings of one report in reading order, plus the document vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSet {
    sentences: Vec<Embedding>,
    global: Embedding,
}

impl SentenceSet {
    pub fn new(sentences: Vec<Embedding>, global: Embedding) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::InvalidInput(
                "a report needs at least one sentence".into(),
            ));
        }
        let d = global.dim();
        if let Some(s) = sentences.iter().find(|s| s.dim() != d) {
            return Err(Error::dim(d, s.dim()));
        }
        Ok(Self { sentences, global })
    }

    pub fn sentences(&self) -> &[Embedding] {
        &self.sentences
    }

    pub fn global(&self) -> &Embedding {
        &self.global
    }
}

/// Splits `n` cells into consecutive groups of `group` cells; the last
/// group holds the remainder when `group` does not divide `n`.
///
/// `partition_axis(14, 3) == [3, 3, 3, 3, 2]`.
pub fn partition_axis(n: usize, group: usize) -> Vec<usize> {
    assert!(
        n >= 1 && group >= 1,
        "partition_axis needs n >= 1 and group >= 1"
    );
    let mut sizes = vec![group; n / group];
    if !n.is_multiple_of(group) {
        sizes.push(n % group);
    }
    sizes
}

/// Number of prototypes `build_image_prototypes` produces for a grid shape.
pub fn image_prototype_count(rows: usize, cols: usize, group_size: usize) -> usize {
    rows.div_ceil(group_size) * cols.div_ceil(group_size) + 1
}

/// Mean-pools non-overlapping `group_size x group_size` blocks (ragged at
/// the bottom/right edge) and appends the grid's global embedding.
pub fn build_image_prototypes(
    item_id: impl Into<String>,
    grid: &PatchGrid,
    group_size: usize,
) -> Result<PrototypeSet> {
    if group_size == 0 {
        return Err(Error::InvalidInput("group size must be at least 1".into()));
    }
    let row_groups = partition_axis(grid.rows, group_size);
    let col_groups = partition_axis(grid.cols, group_size);
    let mut prototypes = Vec::with_capacity(row_groups.len() * col_groups.len() + 1);

    let mut r0 = 0;
    for &rh in &row_groups {
        let mut c0 = 0;
        for &cw in &col_groups {
            let block = (r0..r0 + rh).flat_map(|r| (c0..c0 + cw).map(move |c| (r, c)));
            prototypes.push(Embedding::mean(block.map(|(r, c)| grid.patch(r, c)))?);
            c0 += cw;
        }
        r0 += rh;
    }
    prototypes.push(grid.global.clone());
    PrototypeSet::new(item_id, Modality::Image, prototypes)
}

/// Sizes of `groups` contiguous groups covering `n` items, larger groups first.
pub(crate) fn balanced_groups(n: usize, groups: usize) -> Vec<usize> {
    let base = n / groups;
    let extra = n % groups;
    (0..groups).map(|g| base + usize::from(g < extra)).collect()
}

/// Groups sentences into `min(K - 1, #sentences)` contiguous near-equal
/// groups, mean-pools each, pads to `K - 1` regional prototypes by repeating
/// the last group, and appends the document embedding.
pub fn build_report_prototypes(
    item_id: impl Into<String>,
    sentences: &SentenceSet,
    k: usize,
) -> Result<PrototypeSet> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    let regional = k - 1;
    let n = sentences.sentences.len();
    let groups = regional.min(n);

    let mut prototypes = Vec::with_capacity(k);
    let mut start = 0;
    for size in balanced_groups(n, groups) {
        prototypes.push(Embedding::mean(&sentences.sentences[start..start + size])?);
        start += size;
    }
    let last = prototypes.last().cloned().expect("at least one group");
    prototypes.resize(regional, last);
    prototypes.push(sentences.global.clone());
    PrototypeSet::new(item_id, Modality::Report, prototypes)
}

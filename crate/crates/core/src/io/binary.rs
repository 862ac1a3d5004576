//! Little-endian embedding container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PECM"
//! 4       2     version (u16) = 1
//! 6       1     payload kind: 0 image grid, 1 report sentences, 2 prototype set
//! 7       4     item_count (u32, >= 1)
//! 11      4     dim (u32, >= 1)
//! 15      ..    layout
//!                 kind 0: rows (u32), cols (u32)
//!                 kind 1: item_count x sentence count (u32 each, >= 1)
//!                 kind 2: K (u32)
//! ..      ..    items, in order; each is
//!                 id_len (u32), id (UTF-8, id_len bytes), payload (f32 LE)
//!                 kind 0: rows*cols*dim patches row-major, then dim global
//!                 kind 1: count*dim sentences, then dim global
//!                 kind 2: K*dim prototypes
//! ```
//!
//! The file must end exactly after the last item.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::prototype::{PatchGrid, SentenceSet};
use crate::types::{Embedding, PrototypeSet};

pub const MAGIC: [u8; 4] = *b"PECM";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum PayloadKind {
    ImageGrid = 0,
    ReportSentences = 1,
    PrototypeSet = 2,
}

impl PayloadKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::ImageGrid),
            1 => Some(Self::ReportSentences),
            2 => Some(Self::PrototypeSet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Grid { rows: u32, cols: u32 },
    Sentences { counts: Vec<u32> },
    Prototypes { k: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub version: u16,
    pub kind: PayloadKind,
    pub item_count: u32,
    pub dim: u32,
    pub layout: Layout,
}

/// Decoded contents of an embedding file.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingItems {
    Grids(Vec<(String, PatchGrid)>),
    Sentences(Vec<(String, SentenceSet)>),
    Prototypes(Vec<(String, Vec<Embedding>)>),
}

impl EmbeddingItems {
    pub fn len(&self) -> usize {
        match self {
            EmbeddingItems::Grids(v) => v.len(),
            EmbeddingItems::Sentences(v) => v.len(),
            EmbeddingItems::Prototypes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.bytes.len(),
                needed: n - remaining,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn format_error(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            location: format!("byte offset {at}"),
            message: message.into(),
        }
    }

    fn nonzero_u32(&mut self, what: &str) -> Result<u32> {
        let at = self.pos;
        let v = self.u32()?;
        if v == 0 {
            return Err(self.format_error(at, format!("{what} must be at least 1")));
        }
        Ok(v)
    }

    fn id(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| self.format_error(at, "item id is not valid UTF-8"))
    }

    fn embedding(&mut self, dim: usize, id: &str) -> Result<Embedding> {
        let at = self.pos;
        let raw = self.take(dim * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Embedding::from_f32(&values).map_err(|e| self.format_error(at, format!("item {id:?}: {e}")))
    }

    fn embeddings(&mut self, n: usize, dim: usize, id: &str) -> Result<Vec<Embedding>> {
        (0..n).map(|_| self.embedding(dim, id)).collect()
    }
}

pub fn decode_header(bytes: &[u8], path: &Path) -> Result<(EmbeddingFileHeader, usize)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let at = r.pos;
    let kind_byte = r.u8()?;
    let kind = PayloadKind::from_byte(kind_byte)
        .ok_or_else(|| r.format_error(at, format!("unknown payload kind {kind_byte}")))?;
    let item_count = r.nonzero_u32("item_count")?;
    let dim = r.nonzero_u32("dim")?;
    let layout = match kind {
        PayloadKind::ImageGrid => Layout::Grid {
            rows: r.nonzero_u32("rows")?,
            cols: r.nonzero_u32("cols")?,
        },
        PayloadKind::ReportSentences => Layout::Sentences {
            counts: (0..item_count)
                .map(|_| r.nonzero_u32("sentence count"))
                .collect::<Result<_>>()?,
        },
        PayloadKind::PrototypeSet => Layout::Prototypes {
            k: r.nonzero_u32("K")?,
        },
    };
    Ok((
        EmbeddingFileHeader {
            version,
            kind,
            item_count,
            dim,
            layout,
        },
        r.pos,
    ))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(EmbeddingFileHeader, EmbeddingItems)> {
    let (header, start) = decode_header(bytes, path)?;
    let mut r = Reader {
        bytes,
        pos: start,
        path,
    };
    let dim = header.dim as usize;
    let n = header.item_count as usize;
    let cap = n.min(4096);
    let items = match &header.layout {
        Layout::Grid { rows, cols } => {
            let (rows, cols) = (*rows as usize, *cols as usize);
            let mut out = Vec::with_capacity(cap);
            for _ in 0..n {
                let at = r.pos;
                let id = r.id()?;
                let patches = r.embeddings(rows * cols, dim, &id)?;
                let global = r.embedding(dim, &id)?;
                let grid = PatchGrid::new(rows, cols, patches, global)
                    .map_err(|e| r.format_error(at, e.to_string()))?;
                out.push((id, grid));
            }
            EmbeddingItems::Grids(out)
        }
        Layout::Sentences { counts } => {
            let mut out = Vec::with_capacity(cap);
            for &count in counts {
                let at = r.pos;
                let id = r.id()?;
                let sentences = r.embeddings(count as usize, dim, &id)?;
                let global = r.embedding(dim, &id)?;
                let set = SentenceSet::new(sentences, global)
                    .map_err(|e| r.format_error(at, e.to_string()))?;
                out.push((id, set));
            }
            EmbeddingItems::Sentences(out)
        }
        Layout::Prototypes { k } => {
            let mut out = Vec::with_capacity(cap);
            for _ in 0..n {
                let id = r.id()?;
                let protos = r.embeddings(*k as usize, dim, &id)?;
                out.push((id, protos));
            }
            EmbeddingItems::Prototypes(out)
        }
    };
    if r.pos != bytes.len() {
        return Err(r.format_error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((header, items))
}

pub fn read_embedding_file(
    path: impl AsRef<Path>,
) -> Result<(EmbeddingFileHeader, EmbeddingItems)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(kind: PayloadKind, item_count: usize, dim: usize) -> Result<Self> {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(&MAGIC);
        w.buf.extend_from_slice(&VERSION.to_le_bytes());
        w.buf.push(kind as u8);
        w.u32(item_count)?;
        w.u32(dim)?;
        Ok(w)
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::InvalidInput(format!("{v} does not fit in a u32 field")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn id(&mut self, id: &str) -> Result<()> {
        self.u32(id.len())?;
        self.buf.extend_from_slice(id.as_bytes());
        Ok(())
    }

    fn embedding(&mut self, e: &Embedding) {
        for v in e.as_slice() {
            self.buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

fn require_items<T>(items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InvalidInput(
            "cannot write an embedding file with no items".into(),
        ));
    }
    Ok(())
}

/// Values are narrowed to `f32` on write.
pub fn encode_prototype_sets<'a, I>(sets: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = &'a PrototypeSet>,
{
    let sets: Vec<&PrototypeSet> = sets.into_iter().collect();
    require_items(&sets)?;
    let (k, dim) = (sets[0].k(), sets[0].dim());
    let mut w = Writer::header(PayloadKind::PrototypeSet, sets.len(), dim)?;
    w.u32(k)?;
    for s in sets {
        if s.k() != k {
            return Err(Error::MismatchedK {
                expected: k,
                found: s.k(),
            });
        }
        if s.dim() != dim {
            return Err(Error::dim(dim, s.dim()));
        }
        w.id(s.item_id())?;
        s.prototypes().iter().for_each(|p| w.embedding(p));
    }
    Ok(w.buf)
}

pub fn encode_grids(items: &[(String, PatchGrid)]) -> Result<Vec<u8>> {
    require_items(items)?;
    let first = &items[0].1;
    let (rows, cols, dim) = (first.rows(), first.cols(), first.global().dim());
    let mut w = Writer::header(PayloadKind::ImageGrid, items.len(), dim)?;
    w.u32(rows)?;
    w.u32(cols)?;
    for (id, g) in items {
        if g.rows() != rows || g.cols() != cols {
            return Err(Error::InvalidInput(format!(
                "grid {id:?} is {}x{}, file layout is {rows}x{cols}",
                g.rows(),
                g.cols()
            )));
        }
        if g.global().dim() != dim {
            return Err(Error::dim(dim, g.global().dim()));
        }
        w.id(id)?;
        g.patches().iter().for_each(|p| w.embedding(p));
        w.embedding(g.global());
    }
    Ok(w.buf)
}

pub fn encode_sentences(items: &[(String, SentenceSet)]) -> Result<Vec<u8>> {
    require_items(items)?;
    let dim = items[0].1.global().dim();
    let mut w = Writer::header(PayloadKind::ReportSentences, items.len(), dim)?;
    for (_, s) in items {
        w.u32(s.sentences().len())?;
    }
    for (id, s) in items {
        if s.global().dim() != dim {
            return Err(Error::dim(dim, s.global().dim()));
        }
        w.id(id)?;
        s.sentences().iter().for_each(|p| w.embedding(p));
        w.embedding(s.global());
    }
    Ok(w.buf)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(PathBuf::from(path), e))
}

pub fn write_prototype_file<'a, I>(path: impl AsRef<Path>, sets: I) -> Result<()>
where
    I: IntoIterator<Item = &'a PrototypeSet>,
{
    write_bytes(path.as_ref(), &encode_prototype_sets(sets)?)
}

pub fn write_grid_file(path: impl AsRef<Path>, items: &[(String, PatchGrid)]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_grids(items)?)
}

pub fn write_sentence_file(path: impl AsRef<Path>, items: &[(String, SentenceSet)]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_sentences(items)?)
}

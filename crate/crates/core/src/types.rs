//! Domain types shared by every stage of the pipeline, plus the cosine
//! primitive all similarity math goes through.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector. Entries are finite and the dimension is at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding(
                "dimension must be at least 1".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!(
                "entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    /// Widens 32-bit storage values; every `f32` is exactly representable as `f64`.
    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Arithmetic mean of a nonempty list of equal-dimension embeddings.
    pub fn mean<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut iter = items.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidInput("mean of an empty embedding list".into()))?;
        let mut acc = first.0.clone();
        let mut count = 1usize;
        for e in iter {
            if e.dim() != acc.len() {
                return Err(Error::dim(acc.len(), e.dim()));
            }
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
            count += 1;
        }
        let n = count as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Self::new(acc)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of two raw vectors, clamped to `[-1, 1]`.
pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(&a.0, &b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Report,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Image => f.write_str("image"),
            Modality::Report => f.write_str("report"),
        }
    }
}

/// The ordered prototypes of one item: regional prototypes in row-major
/// region order, then the global prototype last.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    item_id: String,
    modality: Modality,
    prototypes: Vec<Embedding>,
}

impl PrototypeSet {
    /// A single-prototype set (K = 1) is accepted so that global-only
    /// corpora can be loaded; the builders always produce K >= 2.
    pub fn new(
        item_id: impl Into<String>,
        modality: Modality,
        prototypes: Vec<Embedding>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        let Some(first) = prototypes.first() else {
            return Err(Error::InvalidK(0));
        };
        let d = first.dim();
        for p in &prototypes[1..] {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.dim(),
                    context: Some(format!("{modality} {item_id:?}")),
                });
            }
        }
        Ok(Self {
            item_id,
            modality,
            prototypes,
        })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn prototypes(&self) -> &[Embedding] {
        &self.prototypes
    }

    pub fn k(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    pub fn global(&self) -> &Embedding {
        self.prototypes.last().expect("prototype sets are nonempty")
    }

    pub fn regional(&self) -> &[Embedding] {
        &self.prototypes[..self.prototypes.len() - 1]
    }
}

/// Shared per-prototype weights, parameterized as `w = K * softmax(theta)`.
///
/// The derived weights are positive and sum to `K`, so the weighted mean
/// `(1/K) * sum_k s_k * w_k` is a convex combination of the `s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    theta: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidK(0));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidWeights("theta must be finite".into()));
        }
        let weights = scaled_softmax(&theta);
        Ok(Self { theta, weights })
    }

    /// `theta = 0`, hence `w = [1, ..., 1]`.
    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_theta(vec![0.0; k])
    }

    /// Fixed weights given directly. They must be nonnegative and sum to
    /// `K` (within 1e-9, then renormalized). Zero weights are permitted and
    /// map to `theta = -inf`; such a vector cannot be trained further.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidK(0));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - k as f64).abs() > 1e-9 * k as f64 {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected K={k}"
            )));
        }
        let scale = k as f64 / sum;
        let weights: Vec<f64> = weights.into_iter().map(|w| w * scale).collect();
        let theta = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { theta, weights })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn check_k(&self, k: usize) -> Result<()> {
        if self.k() != k {
            return Err(Error::MismatchedK {
                expected: k,
                found: self.k(),
            });
        }
        Ok(())
    }
}

fn scaled_softmax(theta: &[f64]) -> Vec<f64> {
    let k = theta.len() as f64;
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut w: Vec<f64> = exps.iter().map(|e| k * e / sum).collect();
    // one renormalization pass pulls the sum back onto K after rounding
    let total: f64 = w.iter().sum();
    let fix = k / total;
    w.iter_mut().for_each(|x| *x *= fix);
    w
}

/// Images, reports and the report -> images ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    images: BTreeMap<String, PrototypeSet>,
    reports: BTreeMap<String, PrototypeSet>,
    pairing: BTreeMap<String, BTreeSet<String>>,
    image_to_report: BTreeMap<String, String>,
    k: usize,
    dim: usize,
}

impl Corpus {
    pub fn new(
        images: Vec<PrototypeSet>,
        reports: Vec<PrototypeSet>,
        pairing: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        let first = images
            .first()
            .or(reports.first())
            .ok_or_else(|| Error::InvalidCorpus("corpus has no items".into()))?;
        let (k, dim) = (first.k(), first.dim());

        let mut image_map = BTreeMap::new();
        for set in images {
            check_shape(&set, Modality::Image, k, dim)?;
            let id = set.item_id().to_owned();
            if image_map.insert(id.clone(), set).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate image id {id:?}")));
            }
        }
        let mut report_map = BTreeMap::new();
        for set in reports {
            check_shape(&set, Modality::Report, k, dim)?;
            let id = set.item_id().to_owned();
            if report_map.insert(id.clone(), set).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate report id {id:?}")));
            }
        }

        let mut image_to_report = BTreeMap::new();
        for (report, imgs) in &pairing {
            if !report_map.contains_key(report) {
                return Err(Error::InvalidCorpus(format!(
                    "pairing references unknown report {report:?}"
                )));
            }
            if imgs.is_empty() {
                return Err(Error::InvalidCorpus(format!(
                    "report {report:?} has an empty pairing set"
                )));
            }
            for img in imgs {
                if !image_map.contains_key(img) {
                    return Err(Error::InvalidCorpus(format!(
                        "pairing references unknown image {img:?}"
                    )));
                }
                if let Some(prev) = image_to_report.insert(img.clone(), report.clone()) {
                    return Err(Error::InvalidCorpus(format!(
                        "image {img:?} is paired with both {prev:?} and {report:?}"
                    )));
                }
            }
        }
        if let Some(orphan) = image_map
            .keys()
            .find(|id| !image_to_report.contains_key(*id))
        {
            return Err(Error::InvalidCorpus(format!(
                "image {orphan:?} is not paired with any report"
            )));
        }

        Ok(Self {
            images: image_map,
            reports: report_map,
            pairing,
            image_to_report,
            k,
            dim,
        })
    }

    pub fn images(&self) -> &BTreeMap<String, PrototypeSet> {
        &self.images
    }

    pub fn reports(&self) -> &BTreeMap<String, PrototypeSet> {
        &self.reports
    }

    pub fn pairing(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.pairing
    }

    pub fn report_of(&self, image_id: &str) -> Option<&str> {
        self.image_to_report.get(image_id).map(String::as_str)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Ground-truth (image, report) pairs in image-id order.
    pub fn matched_pairs(&self) -> Vec<(&PrototypeSet, &PrototypeSet)> {
        self.image_to_report
            .iter()
            .map(|(img, rep)| (&self.images[img], &self.reports[rep]))
            .collect()
    }
}

fn check_shape(set: &PrototypeSet, modality: Modality, k: usize, dim: usize) -> Result<()> {
    if set.modality() != modality {
        return Err(Error::InvalidCorpus(format!(
            "{:?} has modality {} but was supplied as {modality}",
            set.item_id(),
            set.modality()
        )));
    }
    if set.k() != k {
        return Err(Error::MismatchedK {
            expected: k,
            found: set.k(),
        });
    }
    if set.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: set.dim(),
            context: Some(format!("{modality} {:?}", set.item_id())),
        });
    }
    Ok(())
}

/// Candidates in descending score order; equal scores fall back to
/// ascending candidate id so the order never depends on evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    query_id: String,
    entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn from_scores(
        query_id: impl Into<String>,
        mut entries: Vec<(String, f64)>,
    ) -> Result<Self> {
        if let Some((id, s)) = entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "candidate {id:?} has non-finite score {s}"
            )));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for (id, _) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateCandidate(id.clone()));
            }
        }
        entries.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ida.cmp(idb))
}

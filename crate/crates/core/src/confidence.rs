//! Dual-stream confidence: per-prototype cosine similarities between an
//! image and a report, reduced to a single weighted score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{cosine, Modality, PrototypeSet, WeightVector};

/// How similarities enter the weighted mean.
///
/// `Shifted` maps each similarity to `(s + 1) / 2` first so the score lies in
/// `[0, 1]` and the rerank product stays monotone in both factors. `Raw` is the
/// literal weighted mean and can go negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceTransform {
    Raw,
    #[default]
    Shifted,
}

impl ConfidenceTransform {
    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            ConfidenceTransform::Raw => s,
            ConfidenceTransform::Shifted => (s + 1.0) * 0.5,
        }
    }

    /// d apply(s) / ds
    #[inline]
    pub fn slope(self) -> f64 {
        match self {
            ConfidenceTransform::Raw => 1.0,
            ConfidenceTransform::Shifted => 0.5,
        }
    }
}

impl fmt::Display for ConfidenceTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceTransform::Raw => "raw",
            ConfidenceTransform::Shifted => "shifted",
        })
    }
}

impl FromStr for ConfidenceTransform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "shifted" => Ok(Self::Shifted),
            other => Err(format!(
                "unknown transform {other:?} (expected raw or shifted)"
            )),
        }
    }
}

/// `sims[k] = cosine(image.prototypes[k], report.prototypes[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector(Vec<f64>);

impl SimilarityVector {
    pub fn new(sims: Vec<f64>) -> Result<Self> {
        if sims.is_empty() {
            return Err(Error::InvalidK(0));
        }
        if sims.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidInput(
                "similarities must be finite and within [-1, 1]".into(),
            ));
        }
        Ok(Self(sims))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn similarity_vector(image: &PrototypeSet, report: &PrototypeSet) -> Result<SimilarityVector> {
    if image.modality() != Modality::Image || report.modality() != Modality::Report {
        return Err(Error::InvalidInput(format!(
            "similarity_vector expects (image, report), got ({}, {})",
            image.modality(),
            report.modality()
        )));
    }
    if image.k() != report.k() {
        return Err(Error::MismatchedK {
            expected: image.k(),
            found: report.k(),
        });
    }
    let sims = image
        .prototypes()
        .iter()
        .zip(report.prototypes())
        .map(|(a, b)| cosine(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityVector(sims))
}

/// `c = (1/K) * sum_k t(s_k) * w_k` where `t` is the transform.
pub fn confidence(
    sims: &SimilarityVector,
    weights: &WeightVector,
    transform: ConfidenceTransform,
) -> Result<f64> {
    weights.check_k(sims.len())?;
    Ok(weighted_mean(sims.as_slice(), weights.weights(), transform))
}

pub(crate) fn weighted_mean(sims: &[f64], weights: &[f64], transform: ConfidenceTransform) -> f64 {
    let k = sims.len() as f64;
    let c = sims
        .iter()
        .zip(weights)
        .map(|(s, w)| transform.apply(*s) * w)
        .sum::<f64>()
        / k;
    match transform {
        // rounding in sum(w) = K can push a perfect match a few ulps past 1
        ConfidenceTransform::Shifted => c.clamp(0.0, 1.0),
        ConfidenceTransform::Raw => c,
    }
}

/// Confidence of one (image, report) pair straight from the prototype sets.
pub fn pair_confidence(
    image: &PrototypeSet,
    report: &PrototypeSet,
    weights: &WeightVector,
    transform: ConfidenceTransform,
) -> Result<f64> {
    confidence(&similarity_vector(image, report)?, weights, transform)
}

//! Seeded synthetic corpora with controlled noise and ambiguity.
//!
//! The generator is pinned so corpora are reproducible across platforms and
//! implementations:
//!
//! * Random source: ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64(seed)`),
//!   consumed only through `next_u64`.
//! * Uniform in `[0, 1)`: `(next_u64 >> 11) * 2^-53`.
//! * Standard normal: Box-Muller, cosine branch only, one normal per two
//!   uniforms: `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
//! * Draw order:
//!   1. class centroids, `n_classes x K x dim` normals (class-major);
//!   2. for each pair `i` in order:
//!      class `= next_u64 % n_classes`;
//!      instance latent `= centroid + 0.5 * normal` (`K x dim`);
//!      image prototypes `= latent + noise_sigma * normal` (`K x dim`);
//!      report prototypes `= latent + noise_sigma * normal` (`K x dim`);
//!      ambiguity flag `= uniform < ambiguity_fraction`;
//!      corrupted indices: the first `max(1, K / 2)` positions of a partial
//!      Fisher-Yates shuffle of `0..K` (`j = i + next_u64 % (K - i)`);
//!      corruption noise `ambiguity_sigma * normal` for each corrupted
//!      prototype, image first, then report (`dim` normals each).
//!
//!   The flag, indices and corruption noise are drawn for every pair and
//!   only applied when the flag is set, so the stream stays aligned for
//!   different `ambiguity_fraction` values under one seed.
//! * Every value is rounded through `f32`, as when stored on disk.
//! * Ids are `img-NNNNNN` and `rep-NNNNNN` (pair index, zero padded); image
//!   `i` is paired with report `i`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::types::{Corpus, Embedding, Modality, PrototypeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub k: usize,
    pub noise_sigma: f64,
    pub ambiguity_fraction: f64,
    pub ambiguity_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if self.n_classes == 0 || self.n_classes > self.n_pairs {
            return bad(format!(
                "n_classes must be in 1..={} (got {})",
                self.n_pairs, self.n_classes
            ));
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be finite and >= 0 (got {})",
                self.noise_sigma
            ));
        }
        if !(self.ambiguity_sigma.is_finite() && self.ambiguity_sigma >= 0.0) {
            return bad(format!(
                "ambiguity_sigma must be finite and >= 0 (got {})",
                self.ambiguity_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return bad(format!(
                "ambiguity_fraction must be in [0, 1] (got {})",
                self.ambiguity_fraction
            ));
        }
        Ok(())
    }
}

/// A generated corpus plus the generator's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Class of every item, images and reports alike.
    pub classes: BTreeMap<String, usize>,
    /// Ids (both modalities) of the pairs that received heavy corruption.
    pub ambiguous: BTreeSet<String>,
}

struct Source(ChaCha20Rng);

impl Source {
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    fn block(&mut self, base: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
        base.iter()
            .map(|row| row.iter().map(|v| v + sigma * self.normal()).collect())
            .collect()
    }
}

pub fn image_id(i: usize) -> String {
    format!("img-{i:06}")
}

pub fn report_id(i: usize) -> String {
    format!("rep-{i:06}")
}

fn to_set(id: String, modality: Modality, rows: Vec<Vec<f64>>) -> Result<PrototypeSet> {
    let protos = rows
        .into_iter()
        .map(|r| Embedding::new(r.into_iter().map(|v| v as f32 as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    PrototypeSet::new(id, modality, protos)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let SyntheticSpec {
        n_pairs,
        n_classes,
        dim,
        k,
        ..
    } = *spec;
    let mut rng = Source(ChaCha20Rng::seed_from_u64(spec.seed));

    let centroids: Vec<Vec<Vec<f64>>> = (0..n_classes)
        .map(|_| {
            (0..k)
                .map(|_| (0..dim).map(|_| rng.normal()).collect())
                .collect()
        })
        .collect();

    let n_corrupt = (k / 2).max(1);
    let mut images = Vec::with_capacity(n_pairs);
    let mut reports = Vec::with_capacity(n_pairs);
    let mut pairing = BTreeMap::new();
    let mut classes = BTreeMap::new();
    let mut ambiguous = BTreeSet::new();

    for i in 0..n_pairs {
        let class = rng.below(n_classes);
        let latent = rng.block(&centroids[class], 0.5);
        let mut img = rng.block(&latent, spec.noise_sigma);
        let mut rep = rng.block(&latent, spec.noise_sigma);

        let is_ambiguous = rng.uniform() < spec.ambiguity_fraction;
        let mut idx: Vec<usize> = (0..k).collect();
        for s in 0..n_corrupt {
            let j = s + rng.below(k - s);
            idx.swap(s, j);
        }
        for side in [&mut img, &mut rep] {
            for &p in &idx[..n_corrupt] {
                for v in side[p].iter_mut() {
                    let noise = spec.ambiguity_sigma * rng.normal();
                    if is_ambiguous {
                        *v += noise;
                    }
                }
            }
        }

        let (iid, rid) = (image_id(i), report_id(i));
        classes.insert(iid.clone(), class);
        classes.insert(rid.clone(), class);
        if is_ambiguous {
            ambiguous.insert(iid.clone());
            ambiguous.insert(rid.clone());
        }
        pairing.insert(rid.clone(), BTreeSet::from([iid.clone()]));
        images.push(to_set(iid, Modality::Image, img)?);
        reports.push(to_set(rid, Modality::Report, rep)?);
    }

    Ok(SyntheticCorpus {
        corpus: Corpus::new(images, reports, pairing)?,
        classes,
        ambiguous,
    })
}

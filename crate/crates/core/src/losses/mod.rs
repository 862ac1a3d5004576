//! Training objective over the shared prototype weights.
//!
//! `total = sim + lambda * conf + mu * div` where
//!
//! * `sim` is an in-batch softmax contrastive loss over the initial
//!   (global-embedding) similarities, averaged over queries,
//! * `conf` is the mean of `(1 - C_i)^2` over matched pairs,
//! * `div` penalizes prototype geometry inside each set and is averaged over
//!   every set in the batch (images and reports).
//!
//! Only the weight parameters `theta` are learned, through
//! `w = K * softmax(theta)`. Prototypes are fixed inputs, so `div` has zero
//! gradient and acts as a reported constant during training.

mod gradcheck;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::confidence::{weighted_mean, ConfidenceTransform};
use crate::error::{Error, Result};
use crate::types::{cosine, cosine_slices, dot, norm, PrototypeSet, WeightVector};

pub use gradcheck::{compare_gradients, finite_difference_grad, GradientComparison};
pub use train::{
    train, ConstantRate, CosineAnnealing, EpochRecord, LrSchedule, TrainConfig, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversityMode {
    /// `sum_{k != l} (1 - sim)^2`; zero when all prototypes coincide.
    #[default]
    Verbatim,
    /// `sum_{k != l} sim^2`; zero when prototypes are mutually orthogonal.
    Repulsive,
}

impl fmt::Display for DiversityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiversityMode::Verbatim => "verbatim",
            DiversityMode::Repulsive => "repulsive",
        })
    }
}

impl FromStr for DiversityMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "verbatim" => Ok(Self::Verbatim),
            "repulsive" => Ok(Self::Repulsive),
            other => Err(format!(
                "unknown diversity mode {other:?} (expected verbatim or repulsive)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub mu: f64,
    pub temperature: f64,
    pub transform: ConfidenceTransform,
    pub diversity: DiversityMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 1.0,
            temperature: 1.0,
            transform: ConfidenceTransform::Shifted,
            diversity: DiversityMode::Verbatim,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "mu must be >= 0, got {}",
                self.mu
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Ground-truth (image, report) pairs; each report doubles as an in-batch
/// negative for every other image.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pairs: Vec<(&'a PrototypeSet, &'a PrototypeSet)>,
}

impl<'a> Batch<'a> {
    pub fn new(pairs: Vec<(&'a PrototypeSet, &'a PrototypeSet)>) -> Result<Self> {
        let Some((i0, _)) = pairs.first() else {
            return Err(Error::InvalidInput(
                "batch must hold at least one pair".into(),
            ));
        };
        let (k, d) = (i0.k(), i0.dim());
        for (img, rep) in &pairs {
            for s in [img, rep] {
                if s.k() != k {
                    return Err(Error::MismatchedK {
                        expected: k,
                        found: s.k(),
                    });
                }
                if s.dim() != d {
                    return Err(Error::dim(d, s.dim()));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.pairs[0].0.k()
    }

    pub fn pairs(&self) -> &[(&'a PrototypeSet, &'a PrototypeSet)] {
        &self.pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sim: f64,
    pub conf: f64,
    pub div: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.sim.is_finite()
            && self.conf.is_finite()
            && self.div.is_finite()
            && self.total.is_finite()
    }
}

fn global(set: &PrototypeSet, w: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; set.dim()];
    for (z, wk) in set.prototypes().iter().zip(w) {
        for (acc, v) in h.iter_mut().zip(z.as_slice()) {
            *acc += wk * v;
        }
    }
    h
}

type Matrix = Vec<Vec<f64>>;

/// Image globals, report globals and their cosine matrix.
fn similarity_matrix(batch: &Batch<'_>, w: &[f64]) -> Result<(Matrix, Matrix, Matrix)> {
    let hv: Matrix = batch.pairs.iter().map(|(i, _)| global(i, w)).collect();
    let ht: Matrix = batch.pairs.iter().map(|(_, r)| global(r, w)).collect();
    let sims = hv
        .iter()
        .map(|h| {
            ht.iter()
                .map(|t| cosine_slices(h, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((hv, ht, sims))
}

/// Row-wise softmax probabilities and per-row `-log p_ii`, stabilized by
/// subtracting the row maximum.
fn contrastive_rows(sims: &[Vec<f64>], temperature: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    sims.iter()
        .enumerate()
        .map(|(i, row)| {
            let logits: Vec<f64> = row.iter().map(|s| s / temperature).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let loss = max + z.ln() - logits[i];
            (exps.iter().map(|e| e / z).collect(), loss.max(0.0))
        })
        .unzip()
}

pub fn sim_loss(batch: &Batch<'_>, weights: &WeightVector, temperature: f64) -> Result<f64> {
    weights.check_k(batch.k())?;
    let (_, _, sims) = similarity_matrix(batch, weights.weights())?;
    let (_, losses) = contrastive_rows(&sims, temperature);
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

fn pair_sims(img: &PrototypeSet, rep: &PrototypeSet) -> Result<Vec<f64>> {
    img.prototypes()
        .iter()
        .zip(rep.prototypes())
        .map(|(a, b)| cosine(a, b))
        .collect()
}

pub fn conf_loss(
    batch: &Batch<'_>,
    weights: &WeightVector,
    transform: ConfidenceTransform,
) -> Result<f64> {
    weights.check_k(batch.k())?;
    let mut acc = 0.0;
    for (img, rep) in &batch.pairs {
        let c = weighted_mean(&pair_sims(img, rep)?, weights.weights(), transform);
        acc += (1.0 - c).powi(2);
    }
    Ok(acc / batch.len() as f64)
}

/// Diversity penalty of one prototype set over all ordered pairs `k != l`.
pub fn div_loss(set: &PrototypeSet, mode: DiversityMode) -> Result<f64> {
    let protos = set.prototypes();
    let mut acc = 0.0;
    for (k, a) in protos.iter().enumerate() {
        for (l, b) in protos.iter().enumerate() {
            if k == l {
                continue;
            }
            let s = cosine(a, b)?;
            acc += match mode {
                DiversityMode::Verbatim => (1.0 - s).powi(2),
                DiversityMode::Repulsive => s * s,
            };
        }
    }
    Ok(acc)
}

/// Mean of [`div_loss`] over all 2N prototype sets of the batch.
pub fn batch_div_loss(batch: &Batch<'_>, mode: DiversityMode) -> Result<f64> {
    let mut acc = 0.0;
    for (img, rep) in &batch.pairs {
        acc += div_loss(img, mode)? + div_loss(rep, mode)?;
    }
    Ok(acc / (2 * batch.len()) as f64)
}

pub fn loss_breakdown(
    batch: &Batch<'_>,
    weights: &WeightVector,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let sim = sim_loss(batch, weights, cfg.temperature)?;
    let conf = conf_loss(batch, weights, cfg.transform)?;
    let div = batch_div_loss(batch, cfg.diversity)?;
    Ok(LossBreakdown {
        sim,
        conf,
        div,
        total: sim + cfg.lambda * conf + cfg.mu * div,
    })
}

pub fn total_loss(batch: &Batch<'_>, weights: &WeightVector, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_breakdown(batch, weights, cfg)?.total)
}

/// Loss value together with `d total / d theta`.
pub fn loss_and_grad(
    batch: &Batch<'_>,
    weights: &WeightVector,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    cfg.validate()?;
    let k = batch.k();
    weights.check_k(k)?;
    let w = weights.weights();
    let n = batch.len();
    let nf = n as f64;
    let tau = cfg.temperature;

    // gradient with respect to w first, then chain through the softmax
    let mut grad_w = vec![0.0; k];

    let (hv, ht, sims) = similarity_matrix(batch, w)?;
    let (probs, row_losses) = contrastive_rows(&sims, tau);
    let sim = row_losses.iter().sum::<f64>() / nf;

    let hv_norm: Vec<f64> = hv.iter().map(|h| norm(h)).collect();
    let ht_norm: Vec<f64> = ht.iter().map(|t| norm(t)).collect();
    let d = hv[0].len();
    // a_i = dL/dh_i, b_j = dL/dt_j
    let mut a = vec![vec![0.0; d]; n];
    let mut b = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let g = (probs[i][j] - if i == j { 1.0 } else { 0.0 }) / (tau * nf);
            if g == 0.0 {
                continue;
            }
            let s = sims[i][j];
            let (nh, nt) = (hv_norm[i], ht_norm[j]);
            for x in 0..d {
                let hu = hv[i][x] / nh;
                let tu = ht[j][x] / nt;
                a[i][x] += g * (tu - s * hu) / nh;
                b[j][x] += g * (hu - s * tu) / nt;
            }
        }
    }
    for (i, (img, rep)) in batch.pairs.iter().enumerate() {
        for (kk, gk) in grad_w.iter_mut().enumerate() {
            *gk += dot(img.prototypes()[kk].as_slice(), &a[i]);
            *gk += dot(rep.prototypes()[kk].as_slice(), &b[i]);
        }
    }

    let mut conf = 0.0;
    let kf = k as f64;
    for (img, rep) in &batch.pairs {
        let s = pair_sims(img, rep)?;
        let c = weighted_mean(&s, w, cfg.transform);
        conf += (1.0 - c).powi(2);
        let coef = -2.0 * (1.0 - c) * cfg.lambda / (nf * kf);
        for (gk, sk) in grad_w.iter_mut().zip(&s) {
            *gk += coef * cfg.transform.apply(*sk);
        }
    }
    conf /= nf;

    let div = batch_div_loss(batch, cfg.diversity)?;

    // w = K softmax(theta): dw_k/dtheta_m = w_k (delta_km - w_m / K)
    let wg: f64 = w.iter().zip(&grad_w).map(|(wk, gk)| wk * gk).sum();
    let grad_theta = w
        .iter()
        .zip(&grad_w)
        .map(|(wm, gm)| wm * gm - (wm / kf) * wg)
        .collect();

    Ok((
        LossBreakdown {
            sim,
            conf,
            div,
            total: sim + cfg.lambda * conf + cfg.mu * div,
        },
        grad_theta,
    ))
}

/// Analytic gradient of [`total_loss`] with respect to `theta`.
pub fn grad_theta(batch: &Batch<'_>, weights: &WeightVector, cfg: &LossConfig) -> Result<Vec<f64>> {
    Ok(loss_and_grad(batch, weights, cfg)?.1)
}

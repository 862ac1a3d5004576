use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, loss_breakdown, Batch, LossConfig};
use crate::error::{Error, Result};
use crate::types::{Corpus, PrototypeSet, WeightVector};

/// Step size as a function of the (0-based) epoch.
pub trait LrSchedule {
    fn rate(&self, epoch: usize, epochs: usize) -> f64;
}

/// `min + (initial - min) * (1 + cos(pi * epoch / epochs)) / 2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineAnnealing {
    pub initial: f64,
    pub min: f64,
}

impl CosineAnnealing {
    pub fn new(initial: f64) -> Self {
        Self { initial, min: 0.0 }
    }
}

impl Default for CosineAnnealing {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

impl LrSchedule for CosineAnnealing {
    fn rate(&self, epoch: usize, epochs: usize) -> f64 {
        let progress = epoch as f64 / epochs.max(1) as f64;
        self.min + (self.initial - self.min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRate(pub f64);

impl LrSchedule for ConstantRate {
    fn rate(&self, _epoch: usize, _epochs: usize) -> f64 {
        self.0
    }
}

impl<F> LrSchedule for F
where
    F: Fn(usize, usize) -> f64,
{
    fn rate(&self, epoch: usize, epochs: usize) -> f64 {
        self(epoch, epochs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Starting parameters; `None` means `theta = 0` (uniform weights).
    pub initial_theta: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            initial_theta: None,
        }
    }
}

/// Losses at the end of an epoch (epoch 0 is the starting point), measured
/// on a fixed partition of the pairs into id-ordered chunks of
/// `batch_size`, so consecutive records are directly comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub sim_loss: f64,
    pub conf_loss: f64,
    pub div_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: WeightVector,
    pub trace: Vec<EpochRecord>,
}

/// Plain gradient descent on `theta` over seeded, shuffled mini-batches.
pub fn train(
    corpus: &Corpus,
    cfg: &LossConfig,
    tc: &TrainConfig,
    schedule: &dyn LrSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if tc.epochs == 0 {
        return Err(Error::InvalidInput("epochs must be at least 1".into()));
    }
    if tc.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let pairs = corpus.matched_pairs();
    if pairs.is_empty() {
        return Err(Error::InvalidInput("corpus has no matched pairs".into()));
    }

    let k = corpus.k();
    let mut theta = match &tc.initial_theta {
        Some(t) if t.len() != k => {
            return Err(Error::KMismatch {
                expected: k,
                found: t.len(),
            })
        }
        Some(t) => t.clone(),
        None => vec![0.0; k],
    };

    let mut trace = Vec::with_capacity(tc.epochs + 1);
    let weights = WeightVector::from_theta(theta.clone())?;
    trace.push(evaluate(&pairs, &weights, cfg, tc.batch_size, 0, 0.0)?);

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..tc.epochs {
        let lr = schedule.rate(epoch, tc.epochs);
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&i| pairs[i]).collect())?;
            let weights =
                WeightVector::from_theta(theta.clone()).map_err(|_| Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                })?;
            let (loss, grad) = loss_and_grad(&batch, &weights, cfg)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
        }
        let weights =
            WeightVector::from_theta(theta.clone()).map_err(|_| Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: usize::MAX,
            })?;
        let record = evaluate(&pairs, &weights, cfg, tc.batch_size, epoch + 1, lr)?;
        log::debug!("epoch {}: total {:.6}", record.epoch, record.total);
        trace.push(record);
    }

    Ok(TrainOutcome {
        weights: WeightVector::from_theta(theta)?,
        trace,
    })
}

fn evaluate(
    pairs: &[(&PrototypeSet, &PrototypeSet)],
    weights: &WeightVector,
    cfg: &LossConfig,
    batch_size: usize,
    epoch: usize,
    learning_rate: f64,
) -> Result<EpochRecord> {
    let (mut sim, mut conf, mut div) = (0.0, 0.0, 0.0);
    for (b, chunk) in pairs.chunks(batch_size).enumerate() {
        let batch = Batch::new(chunk.to_vec())?;
        let l = loss_breakdown(&batch, weights, cfg)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        let share = chunk.len() as f64;
        sim += l.sim * share;
        conf += l.conf * share;
        div += l.div * share;
    }
    let n = pairs.len() as f64;
    let (sim, conf, div) = (sim / n, conf / n, div / n);
    Ok(EpochRecord {
        epoch,
        learning_rate,
        sim_loss: sim,
        conf_loss: conf,
        div_loss: div,
        total: sim + cfg.lambda * conf + cfg.mu * div,
    })
}

//! Mini-batch training, optionally on PGD examples.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Splits};
use super::seeds::stream;
use crate::attacks::{pgd, AttackConfig, ModelTarget, PassKind};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, sgd_step, ForwardMode, ForwardOptions, Model, OptimizerConfig};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// Random horizontal flips of training images.
    pub flip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            flip: false,
            seed: 0,
        }
    }
}

/// PGD training: every batch draws ε uniformly from `epsilons` (schedule
/// units, multiplied by `scale` for input units) and runs the matching
/// iteration schedule. ε = 0 trains on the clean batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialTraining {
    pub epsilons: Vec<f64>,
    pub scale: f64,
    pub pixel_bounds: (f64, f64),
}

impl AdversarialTraining {
    /// The ε (schedule units) and PGD configuration for batch `(epoch, batch)`.
    pub fn sample(&self, seed: u64, epoch: usize, batch: usize) -> Result<(f64, AttackConfig)> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("adversarial training needs at least one ε".into()));
        }
        let mut rng = stream(seed, "adv-epsilon", &[epoch as u64, batch as u64]);
        let eps = self.epsilons[rng.random_range(0..self.epsilons.len())];
        let cfg = AttackConfig::scaled(crate::attacks::AttackKind::Pgd, eps, self.scale, self.pixel_bounds)?;
        Ok((eps, cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    /// Percent.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Randomized when the model carries latent dropout, deterministic otherwise.
pub fn deployed_mode(model: &Model) -> PassKind {
    ModelTarget::white_box(model).inference
}

fn forward_mode(kind: PassKind) -> ForwardMode<'static> {
    match kind {
        PassKind::Deterministic => ForwardMode::Deterministic,
        PassKind::Randomized => ForwardMode::Randomized,
    }
}

fn flip_horizontal(x: &mut DenseTensor, sample: usize) {
    let s = x.shape().to_vec();
    let (c, h, w) = (s[1], s[2], s[3]);
    let data = x.data_mut();
    for ch in 0..c {
        for row in 0..h {
            let base = ((sample * c + ch) * h + row) * w;
            data[base..base + w].reverse();
        }
    }
}

/// Accuracy (percent) of `model` on `data` with one pass per chunk of 256.
pub fn accuracy<R: Rng + ?Sized>(model: &Model, data: &Dataset, kind: PassKind, rng: &mut R) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let pred = model.predict(&x, forward_mode(kind), rng)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Trains in place for `cfg.epochs` epochs and returns per-epoch metrics.
pub fn train(
    model: &mut Model,
    splits: &Splits,
    cfg: &TrainConfig,
    adversarial: Option<&AdversarialTraining>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let train = &splits.train;
    let kind = deployed_mode(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut mask_rng = stream(cfg.seed, "train-masks", &[epoch as u64]);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, y) = train.batch(chunk);
            if cfg.flip {
                let mut frng = stream(cfg.seed, "flip", &[epoch as u64, b as u64]);
                for s in 0..chunk.len() {
                    if frng.random_bool(0.5) {
                        flip_horizontal(&mut x, s);
                    }
                }
            }
            if let Some(adv) = adversarial {
                let (eps, attack) = adv.sample(cfg.seed, epoch, b)?;
                if eps > 0.0 {
                    x = adversarial_batch(model, &x, &y, &attack, cfg.seed, epoch, b)?;
                }
            }
            let mut pass = model.forward(&x, forward_mode(kind), &mut mask_rng, ForwardOptions::TRAIN)?;
            let pred = argmax_rows(pass.logits());
            correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
            let (loss, grads) = pass.backward(&y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} at epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            model.accumulate(&grads)?;
            sgd_step(model, &cfg.optimizer, epoch);
        }
        let val_accuracy = accuracy(model, &splits.val, kind, &mut stream(cfg.seed, "val", &[epoch as u64]))?;
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / train.len().max(1) as f64,
            train_accuracy: 100.0 * correct as f64 / train.len().max(1) as f64,
            val_accuracy,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

/// PGD examples for a batch, crafted per example against the deployed model.
fn adversarial_batch(
    model: &Model,
    x: &DenseTensor,
    y: &[usize],
    attack: &AttackConfig,
    seed: u64,
    epoch: usize,
    batch: usize,
) -> Result<DenseTensor> {
    let target = ModelTarget::white_box(model);
    let per: usize = x.shape()[1..].iter().product();
    let example_shape = x.shape()[1..].to_vec();
    let crafted: Vec<Vec<f64>> = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let xi = DenseTensor::new(example_shape.clone(), x.data()[i * per..(i + 1) * per].to_vec())?;
            let mut rng = stream(seed, "adv-attack", &[epoch as u64, batch as u64, i as u64]);
            Ok(pgd(&target, &xi, y[i], attack, &mut rng)?.x_adv.into_data())
        })
        .collect::<Result<_>>()?;
    DenseTensor::new(x.shape().to_vec(), crafted.concat())
}

//! ℓ∞ white-box attacks: FGSM, BIM, PGD and PGD over summed randomized
//! gradients (EOT/BPDA), plus transfer evaluation.
//!
//! Attacks work on one example at a time, shaped like the model input
//! without the batch axis.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardMode, Model};
use crate::tensor::DenseTensor;

/// Anything an attacker can query for input gradients and predictions.
pub trait AttackTarget: Sync {
    /// Per-example input shape.
    fn input_shape(&self) -> Vec<usize>;

    /// Loss and its gradient with respect to `x` for one example. Randomized
    /// targets draw a fresh realization from `rng` on every call.
    fn loss_gradient(&self, x: &DenseTensor, label: usize, rng: &mut dyn RngCore) -> Result<(f64, DenseTensor)>;

    fn predict(&self, x: &DenseTensor, rng: &mut dyn RngCore) -> Result<usize>;
}

/// Whether a model is queried with its full weights or with latent dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassKind {
    Deterministic,
    Randomized,
}

impl PassKind {
    fn mode(self) -> ForwardMode<'static> {
        match self {
            Self::Deterministic => ForwardMode::Deterministic,
            Self::Randomized => ForwardMode::Randomized,
        }
    }
}

/// A [`Model`] seen by the attacker: gradients come from `gradient` passes,
/// the verdict from an `inference` pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelTarget<'a> {
    pub model: &'a Model,
    pub gradient: PassKind,
    pub inference: PassKind,
}

impl<'a> ModelTarget<'a> {
    /// Attacker and defender both use the model as deployed: randomized when
    /// θ < 1, deterministic otherwise.
    pub fn white_box(model: &'a Model) -> Self {
        let kind = if model.theta < 1.0 && model.spec().tucker_layer_count() > 0 {
            PassKind::Randomized
        } else {
            PassKind::Deterministic
        };
        Self {
            model,
            gradient: kind,
            inference: kind,
        }
    }

    fn batch(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        x.reshape(&shape)
    }
}

impl AttackTarget for ModelTarget<'_> {
    fn input_shape(&self) -> Vec<usize> {
        self.model.spec().input_shape.clone()
    }

    fn loss_gradient(&self, x: &DenseTensor, label: usize, rng: &mut dyn RngCore) -> Result<(f64, DenseTensor)> {
        let xb = self.batch(x)?;
        let (loss, g) = self
            .model
            .loss_and_input_grad(&xb, &[label], self.gradient.mode(), rng)?;
        Ok((loss, g.reshape(x.shape())?))
    }

    fn predict(&self, x: &DenseTensor, rng: &mut dyn RngCore) -> Result<usize> {
        let xb = self.batch(x)?;
        Ok(self.model.predict(&xb, self.inference.mode(), rng)?[0])
    }
}

/// Multinomial logistic regression `softmax(W x + b)` with closed-form
/// gradients. `W` is `(classes, features)`; inputs of any shape are
/// flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    pub weight: DenseTensor,
    pub bias: Vec<f64>,
    pub input_shape: Vec<usize>,
}

impl LinearSoftmax {
    pub fn new(weight: DenseTensor, bias: Vec<f64>, input_shape: Vec<usize>) -> Result<Self> {
        let features: usize = input_shape.iter().product();
        if weight.order() != 2 || weight.shape()[1] != features || bias.len() != weight.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "weight {:?}, bias [{}], input {input_shape:?}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            input_shape,
        })
    }

    pub fn logits(&self, x: &DenseTensor) -> Vec<f64> {
        let d = x.len();
        self.weight
            .data()
            .chunks_exact(d)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x.data()).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

impl AttackTarget for LinearSoftmax {
    fn input_shape(&self) -> Vec<usize> {
        self.input_shape.clone()
    }

    fn loss_gradient(&self, x: &DenseTensor, label: usize, _rng: &mut dyn RngCore) -> Result<(f64, DenseTensor)> {
        let k = self.bias.len();
        if label >= k {
            return Err(Error::InvalidLabel { label, classes: k });
        }
        let (loss, p) = crate::nn::tape::softmax_nll(&self.logits(x), label);
        let mut g = vec![0.0; x.len()];
        for (c, row) in self.weight.data().chunks_exact(x.len()).enumerate() {
            let coeff = p[c] - if c == label { 1.0 } else { 0.0 };
            for (gi, w) in g.iter_mut().zip(row) {
                *gi += coeff * w;
            }
        }
        Ok((loss, DenseTensor::new(x.shape().to_vec(), g)?))
    }

    fn predict(&self, x: &DenseTensor, _rng: &mut dyn RngCore) -> Result<usize> {
        let logits = DenseTensor::new(vec![1, self.bias.len()], self.logits(x))?;
        Ok(crate::nn::argmax_rows(&logits)[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    /// PGD stepping along the sign of the summed gradient of `k` randomized passes.
    Bpda,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [Self::Fgsm, Self::Bim, Self::Pgd, Self::Bpda];
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fgsm => "fgsm",
            Self::Bim => "bim",
            Self::Pgd => "pgd",
            Self::Bpda => "bpda",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fgsm" => Ok(Self::Fgsm),
            "bim" => Ok(Self::Bim),
            "pgd" => Ok(Self::Pgd),
            "bpda" | "eot" | "eot-bpda" => Ok(Self::Bpda),
            other => Err(Error::Config(format!("unknown attack `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// ℓ∞ radius in input units.
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub pixel_bounds: (f64, f64),
    /// Randomized passes summed per gradient.
    pub eot_samples: usize,
}

/// Default number of summed passes for [`bpda_pgd`].
pub const DEFAULT_EOT_SAMPLES: usize = 10;

impl AttackConfig {
    /// Single step of size ε in `[0, 1]` pixel space.
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            epsilon,
            step_size: epsilon,
            iterations: 1,
            random_start: false,
            pixel_bounds: (0.0, 1.0),
            eot_samples: 1,
        }
    }

    /// Configuration for `kind` at an image radius `eps255` on the 0–255
    /// scale, for inputs normalized to `[0, 1]`. Iterative attacks follow
    /// [`iteration_schedule`]; ε = 0 yields a no-op configuration.
    pub fn for_image(kind: AttackKind, eps255: f64) -> Result<Self> {
        Self::scaled(kind, eps255, 1.0 / 255.0, (0.0, 1.0))
    }

    /// Like [`AttackConfig::for_image`] with an arbitrary unit `scale`
    /// mapping schedule units to input units.
    pub fn scaled(kind: AttackKind, eps_units: f64, scale: f64, pixel_bounds: (f64, f64)) -> Result<Self> {
        if !(eps_units >= 0.0) || !eps_units.is_finite() {
            return Err(Error::InvalidEpsilon(eps_units));
        }
        let mut cfg = Self::fgsm(eps_units * scale);
        cfg.pixel_bounds = pixel_bounds;
        if kind != AttackKind::Fgsm {
            let (alpha, iterations) = if eps_units > 0.0 {
                iteration_schedule(eps_units)?
            } else {
                (1.0, 0)
            };
            cfg.step_size = alpha * scale;
            cfg.iterations = iterations;
        }
        cfg.random_start = matches!(kind, AttackKind::Pgd | AttackKind::Bpda);
        if kind == AttackKind::Bpda {
            cfg.eot_samples = DEFAULT_EOT_SAMPLES;
        }
        Ok(cfg)
    }

    pub fn validate(&self, iterative: bool) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidEpsilon(self.epsilon));
        }
        if !(self.pixel_bounds.0 < self.pixel_bounds.1) {
            return Err(Error::Config(format!("pixel bounds {:?} are empty", self.pixel_bounds)));
        }
        if iterative && !(self.step_size > 0.0) {
            return Err(Error::Config(format!("step size {} must be positive", self.step_size)));
        }
        if self.eot_samples == 0 {
            return Err(Error::Config("eot_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Step size 1 and `⌊min(ε + 4, 1.25 ε)⌋` iterations for ε on the 0–255 scale.
pub fn iteration_schedule(eps255: f64) -> Result<(f64, usize)> {
    if !(eps255 > 0.0) || !eps255.is_finite() {
        return Err(Error::InvalidEpsilon(eps255));
    }
    let n = (eps255 + 4.0).min(1.25 * eps255).floor();
    Ok((1.0, n as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: DenseTensor,
    /// `x_adv − x`.
    pub delta: DenseTensor,
    /// The target's verdict on `x_adv` differs from the label.
    pub success: bool,
    pub gradient_queries: usize,
    pub predict_queries: usize,
    /// Largest `‖x_t − x‖_∞` over every iterate, the output included.
    pub max_iterate_linf: f64,
    /// Every iterate stayed inside the pixel bounds.
    pub iterates_in_bounds: bool,
}

impl AttackResult {
    pub fn linf(&self) -> f64 {
        self.delta.max_abs()
    }

    pub fn queries(&self) -> usize {
        self.gradient_queries + self.predict_queries
    }
}

/// One line of an attack log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub index: usize,
    pub epsilon: f64,
    pub attack: AttackKind,
    pub success: bool,
    pub queries: usize,
    pub linf: f64,
}

/// Sign with `0 ↦ 0`, so coordinates without gradient stay put.
fn step_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Tracker<'a> {
    x: &'a DenseTensor,
    bounds: (f64, f64),
    max_linf: f64,
    in_bounds: bool,
}

impl<'a> Tracker<'a> {
    fn new(x: &'a DenseTensor, bounds: (f64, f64)) -> Self {
        Self {
            x,
            bounds,
            max_linf: 0.0,
            in_bounds: true,
        }
    }

    fn observe(&mut self, xt: &DenseTensor) {
        for (a, b) in xt.data().iter().zip(self.x.data()) {
            self.max_linf = self.max_linf.max((a - b).abs());
            if *a < self.bounds.0 || *a > self.bounds.1 {
                self.in_bounds = false;
            }
        }
    }
}

/// Clamp to the ε-box around `x`, then to the pixel bounds.
fn project(xt: &mut DenseTensor, x: &DenseTensor, cfg: &AttackConfig) {
    let (lo, hi) = cfg.pixel_bounds;
    for (v, &x0) in xt.data_mut().iter_mut().zip(x.data()) {
        *v = v.clamp(x0 - cfg.epsilon, x0 + cfg.epsilon).clamp(lo, hi);
    }
}

fn check_input<T: AttackTarget + ?Sized>(target: &T, x: &DenseTensor) -> Result<()> {
    if x.shape() != target.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "attack input {:?}, target expects {:?}",
            x.shape(),
            target.input_shape()
        )));
    }
    Ok(())
}

/// `Σ_k ∇ₓ L` over `k` gradient queries, each a fresh randomized pass on a
/// randomized target.
pub fn eot_gradient<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<DenseTensor> {
    if k == 0 {
        return Err(Error::Config("eot_gradient needs k ≥ 1".into()));
    }
    let mut sum = DenseTensor::zeros(x.shape());
    for _ in 0..k {
        let (_, g) = target.loss_gradient(x, label, rng)?;
        sum.add_assign(&g)?;
    }
    Ok(sum)
}

fn finish<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    x_adv: DenseTensor,
    label: usize,
    tracker: Tracker<'_>,
    gradient_queries: usize,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    let success = target.predict(&x_adv, rng)? != label;
    Ok(AttackResult {
        delta: x_adv.sub(x)?,
        x_adv,
        success,
        gradient_queries,
        predict_queries: 1,
        max_iterate_linf: tracker.max_linf,
        iterates_in_bounds: tracker.in_bounds,
    })
}

/// `x + ε · sgn(∇ₓ L)` clipped to the pixel bounds.
pub fn fgsm<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    check_input(target, x)?;
    cfg.validate(false)?;
    let (_, g) = target.loss_gradient(x, label, rng)?;
    let (lo, hi) = cfg.pixel_bounds;
    let x_adv = x.zip_map(&g, |v, gv| (v + cfg.epsilon * step_sign(gv)).clamp(lo, hi))?;
    let mut tracker = Tracker::new(x, cfg.pixel_bounds);
    tracker.observe(&x_adv);
    finish(target, x, x_adv, label, tracker, 1, rng)
}

fn iterate<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    random_start: bool,
    eot_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    check_input(target, x)?;
    cfg.validate(true)?;
    let mut tracker = Tracker::new(x, cfg.pixel_bounds);
    let mut xt = x.clone();
    if random_start && cfg.epsilon > 0.0 {
        for v in xt.data_mut() {
            *v += rng.random_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(&mut xt, x, cfg);
    }
    tracker.observe(&xt);
    let mut queries = 0;
    for _ in 0..cfg.iterations {
        let g = eot_gradient(target, &xt, label, eot_samples, rng)?;
        queries += eot_samples;
        for (v, gv) in xt.data_mut().iter_mut().zip(g.data()) {
            *v += cfg.step_size * step_sign(*gv);
        }
        project(&mut xt, x, cfg);
        tracker.observe(&xt);
    }
    finish(target, x, xt, label, tracker, queries, rng)
}

/// Iterated FGSM with step `α`, clipping the perturbation to `[−ε, ε]` and
/// the image to the pixel bounds after every step. No random start.
pub fn bim<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    iterate(target, x, label, cfg, false, 1, rng)
}

/// BIM with an optional uniform random start in the ε-ball and projection
/// after each step. One gradient query per step.
pub fn pgd<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    iterate(target, x, label, cfg, cfg.random_start, 1, rng)
}

/// PGD whose direction is the sign of [`eot_gradient`] over
/// `cfg.eot_samples` randomized passes.
pub fn bpda_pgd<T: AttackTarget + ?Sized>(
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    iterate(target, x, label, cfg, cfg.random_start, cfg.eot_samples, rng)
}

pub fn run_attack<T: AttackTarget + ?Sized>(
    kind: AttackKind,
    target: &T,
    x: &DenseTensor,
    label: usize,
    cfg: &AttackConfig,
    rng: &mut dyn RngCore,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Fgsm => fgsm(target, x, label, cfg, rng),
        AttackKind::Bim => bim(target, x, label, cfg, rng),
        AttackKind::Pgd => pgd(target, x, label, cfg, rng),
        AttackKind::Bpda => bpda_pgd(target, x, label, cfg, rng),
    }
}

/// Crafts examples on `source` and returns `target`'s accuracy (in `[0, 1]`)
/// on them.
pub fn transfer_attack<S: AttackTarget + ?Sized, T: AttackTarget + ?Sized>(
    source: &S,
    target: &T,
    kind: AttackKind,
    cfg: &AttackConfig,
    examples: &[(DenseTensor, usize)],
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if source.input_shape() != target.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "source input {:?} vs target input {:?}",
            source.input_shape(),
            target.input_shape()
        )));
    }
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, y) in examples {
        let adv = run_attack(kind, source, x, *y, cfg, rng)?;
        if target.predict(&adv.x_adv, rng)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic(seed: u64, d: usize) -> LinearSoftmax {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DenseTensor::from_fn(&[2, d], |_| rng.random_range(-1.0..1.0));
        LinearSoftmax::new(w, vec![0.1, -0.1], vec![d]).unwrap()
    }

    fn point(seed: u64, d: usize) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(&[d], |_| rng.random_range(0.3..0.7))
    }

    #[test]
    fn schedule_closed_form() {
        let want = [
            (1.0, 1),
            (2.0, 2),
            (4.0, 5),
            (8.0, 10),
            (16.0, 20),
            (32.0, 36),
            (64.0, 68),
            (128.0, 132),
        ];
        for (eps, n) in want {
            assert_eq!(iteration_schedule(eps).unwrap(), (1.0, n), "ε = {eps}");
        }
        assert!(iteration_schedule(0.0).is_err());
        assert!(iteration_schedule(-3.0).is_err());
    }

    #[test]
    fn fgsm_on_logistic_matches_closed_form() {
        let model = logistic(1, 6);
        let x = point(2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for label in 0..2 {
            let r = fgsm(&model, &x, label, &AttackConfig::fgsm(0.05), &mut rng).unwrap();
            // ∇ₓ(−log p_y) ∝ (w_other − w_y) with a positive coefficient
            let other = 1 - label;
            for i in 0..6 {
                let dir = model.weight.get(&[other, i]) - model.weight.get(&[label, i]);
                assert!((r.delta.data()[i] - 0.05 * step_sign(dir)).abs() < 1e-15);
            }
            let (l0, _) = model.loss_gradient(&x, label, &mut rng).unwrap();
            let (l1, _) = model.loss_gradient(&r.x_adv, label, &mut rng).unwrap();
            assert!(l1 >= l0);
        }
        let r0 = fgsm(&model, &x, 0, &AttackConfig::fgsm(0.0), &mut rng).unwrap();
        assert_eq!(r0.x_adv, x);
    }

    #[test]
    fn bim_collapses_and_reaches_fgsm_corner() {
        let model = logistic(3, 5);
        let x = point(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps = 0.1;
        let one = AttackConfig {
            iterations: 1,
            ..AttackConfig::fgsm(eps)
        };
        let a = bim(&model, &x, 1, &one, &mut rng).unwrap();
        let b = fgsm(&model, &x, 1, &one, &mut rng).unwrap();
        assert_eq!(a.x_adv, b.x_adv);
        // the gradient sign is constant, so n steps of size α reach ε = n α
        let n = 4;
        let steps = AttackConfig {
            step_size: 0.02,
            iterations: n,
            ..AttackConfig::fgsm(0.02 * n as f64)
        };
        let c = bim(&model, &x, 1, &steps, &mut rng).unwrap();
        let d = fgsm(&model, &x, 1, &AttackConfig::fgsm(0.02 * n as f64), &mut rng).unwrap();
        assert!(c.x_adv.max_abs_diff(&d.x_adv).unwrap() < 1e-12);
        let p = pgd(&model, &x, 1, &one, &mut rng).unwrap();
        assert_eq!(p.x_adv, a.x_adv);
    }

    #[test]
    fn pgd_feasibility_and_projection() {
        let model = logistic(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..20 {
            let x = DenseTensor::from_fn(&[8], |i| if i[0] % 3 == 0 { 0.0 } else { 0.02 * seed as f64 });
            let cfg = AttackConfig {
                random_start: true,
                step_size: 0.03,
                iterations: 7,
                ..AttackConfig::fgsm(0.05)
            };
            let r = pgd(&model, &x, seed as usize % 2, &cfg, &mut rng).unwrap();
            assert!(r.max_iterate_linf <= cfg.epsilon + 1e-12);
            assert!(r.iterates_in_bounds);
            assert_eq!(r.gradient_queries, 7);
        }
        let x = DenseTensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let mut far = DenseTensor::new(vec![2], vec![0.5 + 0.2, 0.5]).unwrap();
        let cfg = AttackConfig::fgsm(0.1);
        project(&mut far, &x, &cfg);
        assert!((far.data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn eot_of_deterministic_target_scales() {
        let model = logistic(9, 4);
        let x = point(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = model.loss_gradient(&x, 0, &mut rng).unwrap();
        let g2 = eot_gradient(&model, &x, 0, 2, &mut rng).unwrap();
        assert!(g2.max_abs_diff(&g.scale(2.0)).unwrap() < 1e-15);
        assert!(eot_gradient(&model, &x, 0, 0, &mut rng).is_err());
    }

    #[test]
    fn transfer_to_self_equals_white_box() {
        let model = logistic(11, 6);
        let examples: Vec<(DenseTensor, usize)> = (0..30).map(|i| (point(100 + i, 6), (i % 2) as usize)).collect();
        let cfg = AttackConfig::fgsm(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acc = transfer_attack(&model, &model, AttackKind::Fgsm, &cfg, &examples, &mut rng).unwrap();
        let white = examples
            .iter()
            .filter(|(x, y)| !fgsm(&model, x, *y, &cfg, &mut rng).unwrap().success)
            .count() as f64
            / 30.0;
        assert_eq!(acc, white);
        let clean = examples
            .iter()
            .filter(|(x, y)| model.predict(x, &mut rng).unwrap() == *y)
            .count() as f64
            / 30.0;
        let zero = transfer_attack(
            &model,
            &model,
            AttackKind::Pgd,
            &AttackConfig::for_image(AttackKind::Pgd, 0.0).unwrap(),
            &examples,
            &mut rng,
        )
        .unwrap();
        assert_eq!(zero, clean);
    }

    #[test]
    fn attack_names_and_config_validation() {
        for k in AttackKind::ALL {
            assert_eq!(k.to_string().parse::<AttackKind>().unwrap(), k);
        }
        assert!("cw".parse::<AttackKind>().is_err());
        let c = AttackConfig::for_image(AttackKind::Bpda, 8.0).unwrap();
        assert_eq!(c.iterations, 10);
        assert_eq!(c.eot_samples, 10);
        assert!((c.step_size - 1.0 / 255.0).abs() < 1e-15);
        assert!(AttackConfig::for_image(AttackKind::Fgsm, -1.0).is_err());
        let mut bad = AttackConfig::fgsm(0.1);
        bad.pixel_bounds = (1.0, 0.0);
        assert!(bad.validate(false).is_err());
    }
}

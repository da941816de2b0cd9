//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod grad;

use latentguard::tensor::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut impl Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Uniform entries in `[-scale, scale]` kept at least `margin` away from
/// every point in `kinks`.
pub fn random_tensor_avoiding(
    shape: &[usize],
    scale: f64,
    kinks: &[f64],
    margin: f64,
    rng: &mut impl Rng,
) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| loop {
        let v = rng.random_range(-scale..scale);
        if kinks.iter().all(|k| (v - k).abs() >= margin) {
            break v;
        }
    })
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-300 {
        0.0
    } else {
        diff / denom
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

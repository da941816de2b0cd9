//! XNOR-style binarized convolution with analytic scaling factors.
//!
//! `I ∗ W ≈ (sgn(I) ⊛ sgn(W)) ⊙ K · α`, where `α[f]` is the mean absolute
//! value of filter `f` and `K` is the channel-mean of `|I|` box-filtered over
//! each receptive field. `sgn(0)` is `+1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, output_size};
use crate::error::{Error, Result};
use crate::factorized::ConvGeometry;
use crate::tensor::DenseTensor;

/// Surrogate derivative used in place of `d sgn / dx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SteVariant {
    /// `1` on `[-1, 1]`, `0` outside.
    #[default]
    ClippedIdentity,
    /// Derivative of `tanh(x)`.
    Tanh,
    /// Derivative of `tanh(0.75 x)`.
    TanhScaled,
}

impl SteVariant {
    pub const ALL: [SteVariant; 3] = [Self::ClippedIdentity, Self::Tanh, Self::TanhScaled];

    /// The smooth function whose derivative the estimator uses.
    pub fn surrogate(self, x: f64) -> f64 {
        match self {
            Self::ClippedIdentity => x.clamp(-1.0, 1.0),
            Self::Tanh => x.tanh(),
            Self::TanhScaled => (0.75 * x).tanh(),
        }
    }
}

impl fmt::Display for SteVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ClippedIdentity => "clipped-identity",
            Self::Tanh => "tanh",
            Self::TanhScaled => "tanh-scaled",
        })
    }
}

impl FromStr for SteVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clipped-identity" | "identity" | "id" => Ok(Self::ClippedIdentity),
            "tanh" => Ok(Self::Tanh),
            "tanh-scaled" | "tanh0.75" => Ok(Self::TanhScaled),
            other => Err(Error::Config(format!("unknown STE variant `{other}`"))),
        }
    }
}

pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn ste_derivative(x: f64, variant: SteVariant) -> f64 {
    match variant {
        SteVariant::ClippedIdentity => {
            if x.abs() <= 1.0 {
                1.0
            } else {
                0.0
            }
        }
        SteVariant::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        SteVariant::TanhScaled => {
            let t = (0.75 * x).tanh();
            0.75 * (1.0 - t * t)
        }
    }
}

/// Sign tensor and per-filter scale `α[f] = mean |w[f, ..]|` of an
/// `(F, C, H, W)` kernel.
pub fn binarize_weight(w: &DenseTensor) -> Result<(DenseTensor, Vec<f64>)> {
    if w.order() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected an (F, C, H, W) kernel, got {:?}",
            w.shape()
        )));
    }
    let filters = w.shape()[0];
    let per = w.len() / filters;
    let alpha = w
        .data()
        .chunks_exact(per)
        .map(|f| f.iter().map(|v| v.abs()).sum::<f64>() / per as f64)
        .collect();
    Ok((w.map(sgn), alpha))
}

/// `K`: channel-mean of `|i|` averaged over every receptive field, shape
/// `(1, h_out, w_out)`. Padded positions count as zero.
pub fn compute_input_scale(
    i: &DenseTensor,
    kernel_h: usize,
    kernel_w: usize,
    geometry: ConvGeometry,
) -> Result<DenseTensor> {
    if i.order() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected a (C, H, W) input, got {:?}",
            i.shape()
        )));
    }
    let (c, h, w) = (i.shape()[0], i.shape()[1], i.shape()[2]);
    output_size(h, kernel_h, geometry.stride.0, geometry.padding.0)?;
    output_size(w, kernel_w, geometry.stride.1, geometry.padding.1)?;
    let a = DenseTensor::from_fn(&[1, 1, h, w], |idx| {
        (0..c).map(|ch| i.get(&[ch, idx[2], idx[3]]).abs()).sum::<f64>() / c as f64
    });
    let box_kernel = DenseTensor::filled(&[1, 1, kernel_h, kernel_w], 1.0 / (kernel_h * kernel_w) as f64);
    let k = conv2d(&a, &box_kernel, geometry)?;
    let (ho, wo) = (k.shape()[2], k.shape()[3]);
    k.reshape(&[1, ho, wo])
}

/// Everything needed to evaluate one binarized convolution on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryConvState {
    pub sign_weight: DenseTensor,
    pub alpha: Vec<f64>,
    pub k_map: DenseTensor,
}

impl BinaryConvState {
    pub fn prepare(w: &DenseTensor, input: &DenseTensor, geometry: ConvGeometry) -> Result<Self> {
        let (sign_weight, alpha) = binarize_weight(w)?;
        let k_map = compute_input_scale(input, w.shape()[2], w.shape()[3], geometry)?;
        Ok(Self {
            sign_weight,
            alpha,
            k_map,
        })
    }
}

/// `(sgn(i) ⊛ sgn(w)) ⊙ K · α` for a single `(C, H, W)` input; returns
/// `(F, h_out, w_out)`.
pub fn binary_conv_forward(state: &BinaryConvState, i: &DenseTensor, geometry: ConvGeometry) -> Result<DenseTensor> {
    if i.order() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected a (C, H, W) input, got {:?}",
            i.shape()
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(i.shape());
    let signed = i.map(sgn).reshape(&shape)?;
    let raw = conv2d(&signed, &state.sign_weight, geometry)?;
    let (f, ho, wo) = (raw.shape()[1], raw.shape()[2], raw.shape()[3]);
    if state.k_map.shape() != [1, ho, wo] || state.alpha.len() != f {
        return Err(Error::ShapeMismatch(format!(
            "scaling factors K {:?} / α[{}] do not fit output ({f}, {ho}, {wo})",
            state.k_map.shape(),
            state.alpha.len()
        )));
    }
    let k = state.k_map.data();
    let mut out = raw.into_data();
    for (fi, chunk) in out.chunks_exact_mut(ho * wo).enumerate() {
        for (v, kv) in chunk.iter_mut().zip(k) {
            *v *= kv * state.alpha[fi];
        }
    }
    DenseTensor::new(vec![f, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_magnitude_filter() {
        let w = DenseTensor::new(vec![1, 1, 2, 2], vec![2.0, -2.0, 2.0, -2.0]).unwrap();
        let (s, a) = binarize_weight(&w).unwrap();
        assert_eq!(s.data(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(a, vec![2.0]);
    }

    #[test]
    fn positive_filter_and_zero_sign() {
        let w = DenseTensor::new(vec![1, 1, 1, 3], vec![0.5, 1.0, 1.5]).unwrap();
        let (s, a) = binarize_weight(&w).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
        assert_eq!(a, vec![1.0]);
        assert_eq!(sgn(0.0), 1.0);
        assert_eq!(sgn(-0.0), 1.0);
    }

    #[test]
    fn alpha_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = DenseTensor::from_fn(&[1, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
        let (s, a) = binarize_weight(&w).unwrap();
        let cost = |alpha: f64| -> f64 {
            w.data()
                .iter()
                .zip(s.data())
                .map(|(x, sg)| (x - alpha * sg).powi(2))
                .sum()
        };
        let best = (0..=(2000.0 * w.max_abs()) as usize)
            .map(|k| cost(k as f64 * 1e-3))
            .fold(f64::INFINITY, f64::min);
        assert!(cost(a[0]) <= best + 1e-6);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = DenseTensor::from_fn(&[3, 2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let (s1, a1) = binarize_weight(&w).unwrap();
        let (s2, a2) = binarize_weight(&w.scale(2.5)).unwrap();
        assert_eq!(s1, s2);
        for (x, y) in a1.iter().zip(&a2) {
            assert!((2.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn input_scale_cases() {
        let constant = DenseTensor::filled(&[2, 5, 5], -0.4);
        let k = compute_input_scale(&constant, 3, 3, ConvGeometry::default()).unwrap();
        assert_eq!(k.shape(), &[1, 3, 3]);
        assert!(k.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));

        let single = DenseTensor::new(vec![1, 2, 2], vec![-1.0, 2.0, 3.0, -4.0]).unwrap();
        let k = compute_input_scale(&single, 1, 1, ConvGeometry::default()).unwrap();
        assert_eq!(k.data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i = DenseTensor::from_fn(&[3, 5, 5], |_| rng.random_range(-1.0..1.0));
        let k = compute_input_scale(&i, 3, 3, ConvGeometry::default()).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let mut a = 0.0;
                        for c in 0..3 {
                            a += i.get(&[c, y + dy, x + dx]).abs();
                        }
                        acc += a / 3.0;
                    }
                }
                assert!((k.get(&[0, y, x]) - acc / 9.0).abs() < 1e-12);
            }
        }
        assert!(compute_input_scale(&i, 7, 7, ConvGeometry::default()).is_err());
    }

    #[test]
    fn all_ones_one_by_one() {
        let i = DenseTensor::ones(&[1, 3, 3]);
        let w = DenseTensor::filled(&[1, 1, 1, 1], 0.5);
        let state = BinaryConvState::prepare(&w, &i, ConvGeometry::default()).unwrap();
        let out = binary_conv_forward(&state, &i, ConvGeometry::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn negating_input_negates_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let i = DenseTensor::from_fn(&[2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let w = DenseTensor::from_fn(&[3, 2, 3, 3], |_| rng.random_range(-1.0..1.0));
        let g = ConvGeometry {
            stride: (1, 1),
            padding: (1, 1),
        };
        let pos = binary_conv_forward(&BinaryConvState::prepare(&w, &i, g).unwrap(), &i, g).unwrap();
        let neg_i = i.scale(-1.0);
        let neg = binary_conv_forward(&BinaryConvState::prepare(&w, &neg_i, g).unwrap(), &neg_i, g).unwrap();
        assert_eq!(neg, pos.scale(-1.0));
    }

    #[test]
    fn matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let i = DenseTensor::from_fn(&[2, 5, 4], |_| rng.random_range(-1.0..1.0));
        let w = DenseTensor::from_fn(&[3, 2, 3, 2], |_| rng.random_range(-1.0..1.0));
        let g = ConvGeometry {
            stride: (2, 1),
            padding: (1, 0),
        };
        let state = BinaryConvState::prepare(&w, &i, g).unwrap();
        let out = binary_conv_forward(&state, &i, g).unwrap();
        let (ho, wo) = (out.shape()[1], out.shape()[2]);
        for f in 0..3 {
            let alpha: f64 = (0..12).map(|k| w.data()[f * 12 + k].abs()).sum::<f64>() / 12.0;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (mut acc, mut kacc) = (0.0, 0.0);
                    for ky in 0..3 {
                        for kx in 0..2 {
                            let y = (oy * 2 + ky) as isize - 1;
                            let x = ox + kx;
                            if y < 0 || y as usize >= 5 {
                                continue;
                            }
                            for c in 0..2 {
                                let v = i.get(&[c, y as usize, x]);
                                acc += sgn(v) * sgn(w.get(&[f, c, ky, kx]));
                                kacc += v.abs() / 2.0;
                            }
                        }
                    }
                    let want = acc * (kacc / 6.0) * alpha;
                    assert!((out.get(&[f, oy, ox]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ste_values() {
        assert_eq!(ste_derivative(0.0, SteVariant::ClippedIdentity), 1.0);
        assert_eq!(ste_derivative(0.0, SteVariant::Tanh), 1.0);
        assert_eq!(ste_derivative(0.0, SteVariant::TanhScaled), 0.75);
        assert_eq!(ste_derivative(2.0, SteVariant::ClippedIdentity), 0.0);
        let closed = 0.75 * (1.0 - 1.5f64.tanh().powi(2));
        assert!((ste_derivative(2.0, SteVariant::TanhScaled) - closed).abs() < 1e-15);
        assert!((closed - 0.135530).abs() < 1e-6);
    }

    #[test]
    fn ste_matches_surrogate_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-3.0..3.0);
            for v in [SteVariant::Tanh, SteVariant::TanhScaled] {
                let h = 1e-6;
                let fd = (v.surrogate(x + h) - v.surrogate(x - h)) / (2.0 * h);
                assert!((fd - ste_derivative(x, v)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SteVariant::ALL {
            assert_eq!(v.to_string().parse::<SteVariant>().unwrap(), v);
        }
        assert!("sigmoid".parse::<SteVariant>().is_err());
    }
}

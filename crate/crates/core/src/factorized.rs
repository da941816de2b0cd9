//! Tucker-parametrized convolution kernels with Bernoulli dropout applied in
//! the latent subspace.
//!
//! A kernel `W ∈ R^{F×C×H×W}` is stored as a core `G` and factors
//! `U^F: F×R_F`, `U^C: C×R_C`, `U^H: H×R_H`, `U^W: W×R_W`. A forward pass draws
//! one keep vector `λ` per mode and reconstructs
//!
//! ```text
//! W̃ = (G ⊙ (λ^F ∘ λ^C ∘ λ^H ∘ λ^W)) ×_0 U^F ×_1 U^C ×_2 U^H ×_3 U^W
//! ```
//!
//! The diagonal sketch matrices `diag(λ)` are never formed; the core is masked
//! elementwise. [`randomized_weight_reference`] evaluates the literal
//! sketched-core / sketched-factor expression and is kept as an oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    fold, mode_product, tucker_decompose, tucker_reconstruct, unfold, DecompositionOptions, DenseTensor, FactorMatrix,
    TuckerFactors,
};

/// Stride and padding of a 2-D convolution, as `(height, width)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerConvLayer {
    factors: TuckerFactors,
    theta: f64,
    rescale: bool,
    pub geometry: ConvGeometry,
}

impl TuckerConvLayer {
    pub fn new(factors: TuckerFactors, theta: f64, rescale: bool) -> Result<Self> {
        check_theta(theta)?;
        if factors.core().order() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernels are order 4, got core shape {:?}",
                factors.core().shape()
            )));
        }
        Ok(Self {
            factors,
            theta,
            rescale,
            geometry: ConvGeometry::default(),
        })
    }

    pub fn with_geometry(mut self, geometry: ConvGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn factors(&self) -> &TuckerFactors {
        &self.factors
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn rescale(&self) -> bool {
        self.rescale
    }

    pub fn ranks(&self) -> &[usize] {
        self.factors.ranks()
    }

    /// `(F, C, H, W)` of the reconstructed kernel.
    pub fn kernel_shape(&self) -> Vec<usize> {
        self.factors.full_shape()
    }

    /// Multiplier for surviving core entries: `θ^{-order}` with rescaling on,
    /// otherwise 1.
    pub fn survivor_scale(&self) -> f64 {
        survivor_scale(self.theta, self.rescale, self.factors.core().order())
    }
}

pub(crate) fn survivor_scale(theta: f64, rescale: bool, order: usize) -> f64 {
    if rescale && theta > 0.0 {
        theta.powi(-(order as i32))
    } else {
        1.0
    }
}

/// Per-mode 0/1 keep vectors for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    lambdas: Vec<Vec<f64>>,
    seed: Option<u64>,
}

impl DropoutMasks {
    pub fn new(lambdas: Vec<Vec<f64>>) -> Result<Self> {
        for (n, l) in lambdas.iter().enumerate() {
            if let Some(v) = l.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::ShapeMismatch(format!(
                    "mask entries must be 0 or 1, mode {n} holds {v}"
                )));
            }
        }
        Ok(Self { lambdas, seed: None })
    }

    pub fn ones(ranks: &[usize]) -> Self {
        Self {
            lambdas: ranks.iter().map(|&r| vec![1.0; r]).collect(),
            seed: None,
        }
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    /// Seed that produced these masks, when sampled through [`sample_masks_seeded`].
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.lambdas.iter().map(Vec::len).collect()
    }

    /// `diag(λ_mode)`.
    pub fn sketch_matrix(&self, mode: usize) -> FactorMatrix {
        FactorMatrix::diag(&self.lambdas[mode])
    }

    /// Outer product of the keep vectors, scaled by `scale`.
    pub fn core_mask(&self, scale: f64) -> DenseTensor {
        let ranks = self.ranks();
        DenseTensor::from_fn(&ranks, |idx| {
            let keep = idx.iter().zip(&self.lambdas).all(|(&i, l)| l[i] != 0.0);
            if keep {
                scale
            } else {
                0.0
            }
        })
    }

    fn check_ranks(&self, ranks: &[usize]) -> Result<()> {
        if self.ranks() != ranks {
            return Err(Error::ShapeMismatch(format!(
                "mask lengths {:?} do not match core ranks {:?}",
                self.ranks(),
                ranks
            )));
        }
        Ok(())
    }
}

/// How a factorized layer turns its parameters into a kernel for one pass.
#[derive(Debug, Clone, Copy)]
pub enum LayerMode<'a> {
    /// No dropout (θ treated as 1).
    Deterministic,
    /// Fresh masks drawn from the supplied RNG on every call.
    Randomized,
    /// Caller-supplied masks.
    Replay(&'a DropoutMasks),
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidProbability(theta));
    }
    Ok(())
}

/// Draws i.i.d. Bernoulli(θ) keep vectors, one per mode.
pub fn sample_masks<R: Rng + ?Sized>(ranks: &[usize], theta: f64, rng: &mut R) -> Result<DropoutMasks> {
    check_theta(theta)?;
    let lambdas = ranks
        .iter()
        .map(|&r| {
            (0..r)
                .map(|_| if rng.random::<f64>() < theta { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(DropoutMasks { lambdas, seed: None })
}

pub fn sample_masks_seeded(ranks: &[usize], theta: f64, seed: u64) -> Result<DropoutMasks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = sample_masks(ranks, theta, &mut rng)?;
    masks.seed = Some(seed);
    Ok(masks)
}

/// Masks the core elementwise and projects back with the unmodified factors.
pub fn randomized_weight(layer: &TuckerConvLayer, masks: &DropoutMasks) -> Result<DenseTensor> {
    let core = layer.factors.core();
    masks.check_ranks(core.shape())?;
    let masked = core.zip_map(&masks.core_mask(layer.survivor_scale()), |g, m| g * m)?;
    let f = TuckerFactors::new(masked, layer.factors.factors().to_vec())?;
    tucker_reconstruct(&f)
}

/// Literal evaluation with explicit sketch matrices: the core contracted with
/// `M_n` on every mode, then with the sketched factors `U_n M_nᵀ`.
pub fn randomized_weight_reference(layer: &TuckerConvLayer, masks: &DropoutMasks) -> Result<DenseTensor> {
    let core = layer.factors.core();
    masks.check_ranks(core.shape())?;
    let mut sketched = core.clone();
    for n in 0..core.order() {
        sketched = mode_product(&sketched, &masks.sketch_matrix(n), n)?;
    }
    let mut out = sketched;
    for (n, u) in layer.factors.factors().iter().enumerate() {
        let sketched_factor = u.matmul(&masks.sketch_matrix(n).transpose())?;
        out = mode_product(&out, &sketched_factor, n)?;
    }
    Ok(out.scale(layer.survivor_scale()))
}

/// Kernel used for one forward pass under `mode`.
pub fn effective_weight<R: Rng + ?Sized>(
    layer: &TuckerConvLayer,
    mode: LayerMode<'_>,
    rng: &mut R,
) -> Result<DenseTensor> {
    match mode {
        LayerMode::Deterministic => tucker_reconstruct(&layer.factors),
        LayerMode::Randomized => {
            let masks = sample_masks(layer.ranks(), layer.theta, rng)?;
            randomized_weight(layer, &masks)
        }
        LayerMode::Replay(masks) => randomized_weight(layer, masks),
    }
}

/// Decomposes a pretrained dense kernel into a factorized layer.
pub fn init_from_dense(w: &DenseTensor, ranks: &[usize], theta: f64) -> Result<TuckerConvLayer> {
    if w.order() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected an order-4 kernel, got {:?}",
            w.shape()
        )));
    }
    let factors = tucker_decompose(w, &DecompositionOptions::new(ranks.to_vec()))?;
    TuckerConvLayer::new(factors, theta, false)
}

/// Matrix special case: only the filter mode is factorized (rank `rank_f`);
/// the channel and spatial factors are identities and never masked.
pub fn matrix_layer(w: &DenseTensor, rank_f: usize, theta: f64) -> Result<TuckerConvLayer> {
    if w.order() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "expected an order-4 kernel, got {:?}",
            w.shape()
        )));
    }
    let mut ranks = w.shape().to_vec();
    ranks[0] = rank_f;
    let opts = DecompositionOptions::new(ranks).hosvd_only();
    let (core, factors) = tucker_decompose(w, &opts)?.into_parts();
    // the trailing factors are square orthogonal; fold them into the core
    let mut core = core;
    for (n, u) in factors.iter().enumerate().skip(1) {
        core = mode_product(&core, u, n)?;
    }
    let mut new_factors = vec![factors[0].clone()];
    new_factors.extend(w.shape()[1..].iter().map(|&d| FactorMatrix::identity(d)));
    TuckerConvLayer::new(TuckerFactors::new(core, new_factors)?, theta, false)
}

/// Matrix-case kernel computed on the mode-0 unfolding:
/// `W_(0) = U^F · diag(mask_F) · G_(0)`, folded back to `(F, C, H, W)`.
pub fn matrixized_weight(layer: &TuckerConvLayer, mask_f: &[f64]) -> Result<DenseTensor> {
    for (n, u) in layer.factors.factors().iter().enumerate().skip(1) {
        if *u != FactorMatrix::identity(u.rows()) {
            return Err(Error::NotMatrixLayer(format!("factor {n} is not an identity")));
        }
    }
    let core = layer.factors.core();
    if mask_f.len() != core.shape()[0] {
        return Err(Error::ShapeMismatch(format!(
            "mask of length {} for filter rank {}",
            mask_f.len(),
            core.shape()[0]
        )));
    }
    let scaled: Vec<f64> = mask_f.iter().map(|m| m * layer.survivor_scale()).collect();
    let projected = layer.factors.factors()[0]
        .matmul(&FactorMatrix::diag(&scaled))?
        .matmul(&unfold(core, 0)?)?;
    fold(&projected, 0, &layer.kernel_shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn random_layer(kernel: &[usize], ranks: &[usize], seed: u64) -> TuckerConvLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let core = random_tensor(ranks, &mut rng);
        let factors = kernel
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| FactorMatrix::from_fn(d, r, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        TuckerConvLayer::new(TuckerFactors::new(core, factors).unwrap(), 0.7, false).unwrap()
    }

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ones = sample_masks(&[3, 2, 4, 1], 1.0, &mut rng).unwrap();
        assert!(ones.lambdas().iter().flatten().all(|&v| v == 1.0));
        let zeros = sample_masks(&[3, 2, 4, 1], 0.0, &mut rng).unwrap();
        assert!(zeros.lambdas().iter().flatten().all(|&v| v == 0.0));
        assert!(matches!(
            sample_masks(&[1], 1.5, &mut rng),
            Err(Error::InvalidProbability(_))
        ));
        assert!(sample_masks(&[1], -0.1, &mut rng).is_err());
    }

    #[test]
    fn bernoulli_frequency_within_three_standard_errors() {
        let draws = 100_000;
        let theta = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 8];
        for _ in 0..draws {
            let m = sample_masks(&[8], theta, &mut rng).unwrap();
            for (c, &v) in counts.iter_mut().zip(&m.lambdas()[0]) {
                *c += v as usize;
            }
        }
        let bound = 3.0 * (theta * (1.0 - theta) / draws as f64).sqrt();
        for c in counts {
            let mean = c as f64 / draws as f64;
            assert!((mean - theta).abs() <= bound, "{mean}");
        }
    }

    #[test]
    fn mask_matrices_are_idempotent_and_symmetric() {
        let m = sample_masks_seeded(&[5, 3], 0.5, 8).unwrap();
        assert_eq!(m.seed(), Some(8));
        for n in 0..2 {
            let s = m.sketch_matrix(n);
            assert_eq!(s.matmul(&s).unwrap(), s);
            assert_eq!(s.transpose(), s);
        }
        assert!(DropoutMasks::new(vec![vec![0.5]]).is_err());
    }

    #[test]
    fn all_ones_and_all_zeros() {
        let layer = random_layer(&[4, 3, 3, 3], &[2, 2, 2, 2], 3);
        let ones = DropoutMasks::ones(layer.ranks());
        let full = tucker_reconstruct(layer.factors()).unwrap();
        assert_eq!(randomized_weight(&layer, &ones).unwrap(), full);
        assert!(
            randomized_weight_reference(&layer, &ones)
                .unwrap()
                .max_abs_diff(&full)
                .unwrap()
                < 1e-12
        );
        let zeros = DropoutMasks::new(vec![vec![0.0; 2]; 4]).unwrap();
        let w = randomized_weight(&layer, &zeros).unwrap();
        assert_eq!(w.shape(), &[4, 3, 3, 3]);
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroing_one_filter_component_matches_slice_oracle() {
        let layer = random_layer(&[4, 3, 3, 3], &[3, 2, 2, 2], 4);
        let mut lambdas = vec![vec![1.0; 3], vec![1.0; 2], vec![1.0; 2], vec![1.0; 2]];
        lambdas[0][1] = 0.0;
        let masks = DropoutMasks::new(lambdas).unwrap();
        let mut core = layer.factors().core().clone();
        for c in 0..2 {
            for h in 0..2 {
                for w in 0..2 {
                    core.set(&[1, c, h, w], 0.0);
                }
            }
        }
        let oracle =
            tucker_reconstruct(&TuckerFactors::new(core, layer.factors().factors().to_vec()).unwrap()).unwrap();
        let got = randomized_weight(&layer, &masks).unwrap();
        assert!(got.max_abs_diff(&oracle).unwrap() < 1e-14);
    }

    #[test]
    fn single_survivor_is_rank_one() {
        let layer = random_layer(&[3, 2, 3, 2], &[2, 2, 2, 2], 5);
        let keep = [1usize, 0, 1, 1];
        let lambdas = keep
            .iter()
            .map(|&k| (0..2).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let masks = DropoutMasks::new(lambdas).unwrap();
        let g = layer.factors().core().get(&keep);
        let u = layer.factors().factors();
        let oracle = DenseTensor::from_fn(&[3, 2, 3, 2], |i| {
            g * (0..4).map(|n| u[n].get(i[n], keep[n])).product::<f64>()
        });
        let reference = randomized_weight_reference(&layer, &masks).unwrap();
        assert!(reference.max_abs_diff(&oracle).unwrap() < 1e-12);
        assert!(
            randomized_weight(&layer, &masks)
                .unwrap()
                .max_abs_diff(&oracle)
                .unwrap()
                < 1e-12
        );
    }

    #[test]
    fn mask_rank_mismatch_is_rejected() {
        let layer = random_layer(&[2, 2, 2, 2], &[2, 2, 2, 2], 6);
        let masks = DropoutMasks::ones(&[2, 2, 2]);
        assert!(randomized_weight(&layer, &masks).is_err());
        assert!(randomized_weight_reference(&layer, &masks).is_err());
    }

    #[test]
    fn reconstructed_kernel_stays_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ranks = [3, 3, 2, 2];
        let core = DenseTensor::from_fn(&ranks, |_| rng.random_range(0.1..1.0));
        let factors = [5, 4, 3, 3]
            .iter()
            .zip(&ranks)
            .map(|(&d, &r)| FactorMatrix::from_fn(d, r, |_, _| rng.random_range(0.1..1.0)))
            .collect();
        let layer = TuckerConvLayer::new(TuckerFactors::new(core, factors).unwrap(), 0.5, false).unwrap();
        let mut checked = 0;
        for seed in 0..200 {
            let masks = sample_masks_seeded(&ranks, 0.5, seed).unwrap();
            if masks.lambdas().iter().any(|l| l.iter().all(|&v| v == 0.0)) {
                continue;
            }
            let w = randomized_weight(&layer, &masks).unwrap();
            assert!(w.data().iter().all(|&v| v != 0.0));
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn effective_weight_modes() {
        let mut layer = random_layer(&[4, 3, 3, 3], &[3, 2, 2, 2], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let det1 = effective_weight(&layer, LayerMode::Deterministic, &mut rng).unwrap();
        let det2 = effective_weight(&layer, LayerMode::Deterministic, &mut rng).unwrap();
        assert_eq!(det1, det2);

        let a = effective_weight(&layer, LayerMode::Randomized, &mut ChaCha8Rng::seed_from_u64(3));
        let b = effective_weight(&layer, LayerMode::Randomized, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.unwrap(), b.unwrap());

        layer.theta = 0.5;
        let outputs: Vec<DenseTensor> = (0..8)
            .map(|s| effective_weight(&layer, LayerMode::Randomized, &mut ChaCha8Rng::seed_from_u64(s)).unwrap())
            .collect();
        assert!(outputs.windows(2).any(|w| w[0] != w[1]));

        layer.theta = 1.0;
        let r = effective_weight(&layer, LayerMode::Randomized, &mut rng).unwrap();
        assert_eq!(r, det1);

        let masks = sample_masks_seeded(layer.ranks(), 0.5, 77).unwrap();
        let replay = effective_weight(&layer, LayerMode::Replay(&masks), &mut rng).unwrap();
        assert_eq!(replay, randomized_weight(&layer, &masks).unwrap());
    }

    #[test]
    fn init_from_dense_exactness() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_tensor(&[6, 4, 3, 3], &mut rng);
        let full = init_from_dense(&w, &[6, 4, 3, 3], 0.9).unwrap();
        let det = effective_weight(&full, LayerMode::Deterministic, &mut rng).unwrap();
        assert!(crate::tensor::relative_error(&w, &det).unwrap() < 1e-10);

        let (a, b, c, d) = ([1.0, -0.5, 2.0], [0.3, 1.2], [1.0, 0.0, -1.0], [0.5, 0.25, 2.0]);
        let separable = DenseTensor::from_fn(&[3, 2, 3, 3], |i| a[i[0]] * b[i[1]] * c[i[2]] * d[i[3]]);
        let l = init_from_dense(&separable, &[1, 1, 1, 1], 1.0).unwrap();
        let rec = tucker_reconstruct(l.factors()).unwrap();
        assert!(crate::tensor::relative_error(&separable, &rec).unwrap() < 1e-10);

        let ranks = [3, 2, 2, 2];
        let truncated = init_from_dense(&w, &ranks, 0.9).unwrap();
        let direct = tucker_decompose(&w, &DecompositionOptions::new(ranks.to_vec())).unwrap();
        let e1 = crate::tensor::relative_error(&w, &tucker_reconstruct(truncated.factors()).unwrap()).unwrap();
        let e2 = crate::tensor::relative_error(&w, &tucker_reconstruct(&direct).unwrap()).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
        assert!(init_from_dense(&DenseTensor::ones(&[2, 2]), &[1, 1], 0.5).is_err());
    }

    #[test]
    fn matrix_case_two_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_tensor(&[6, 3, 3, 3], &mut rng);
        let layer = matrix_layer(&w, 4, 0.8).unwrap();
        assert_eq!(layer.ranks(), &[4, 3, 3, 3]);

        let ones = vec![1.0; 4];
        let full = tucker_reconstruct(layer.factors()).unwrap();
        assert!(matrixized_weight(&layer, &ones).unwrap().max_abs_diff(&full).unwrap() < 1e-12);

        let mask_f = vec![1.0, 0.0, 1.0, 1.0];
        let masks = DropoutMasks::new(vec![mask_f.clone(), vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]).unwrap();
        let tensor_path = randomized_weight(&layer, &masks).unwrap();
        let matrix_path = matrixized_weight(&layer, &mask_f).unwrap();
        assert!(tensor_path.max_abs_diff(&matrix_path).unwrap() < 1e-12);

        // slice oracle: removing latent filter component 1 everywhere
        let mut core = layer.factors().core().clone();
        for c in 0..3 {
            for h in 0..3 {
                for x in 0..3 {
                    core.set(&[1, c, h, x], 0.0);
                }
            }
        }
        let oracle =
            tucker_reconstruct(&TuckerFactors::new(core, layer.factors().factors().to_vec()).unwrap()).unwrap();
        assert!(matrix_path.max_abs_diff(&oracle).unwrap() < 1e-12);

        let tucker = random_layer(&[4, 3, 3, 3], &[2, 2, 2, 2], 13);
        assert!(matches!(
            matrixized_weight(&tucker, &[1.0, 1.0]),
            Err(Error::NotMatrixLayer(_))
        ));
    }

    #[test]
    fn expectation_with_and_without_rescaling() {
        let base = random_layer(&[3, 2, 2, 2], &[2, 2, 2, 2], 14);
        let theta = 0.7;
        let full = tucker_reconstruct(base.factors()).unwrap();
        for rescale in [true, false] {
            let layer = TuckerConvLayer::new(base.factors().clone(), theta, rescale).unwrap();
            let draws = 10_000;
            let mut rng = ChaCha8Rng::seed_from_u64(15);
            let mut sum = DenseTensor::zeros(&[3, 2, 2, 2]);
            let mut sq = DenseTensor::zeros(&[3, 2, 2, 2]);
            for _ in 0..draws {
                let w = effective_weight(&layer, LayerMode::Randomized, &mut rng).unwrap();
                sum.add_assign(&w).unwrap();
                sq.add_assign(&w.map(|v| v * v)).unwrap();
            }
            let target = if rescale {
                full.clone()
            } else {
                full.scale(theta.powi(4))
            };
            for k in 0..sum.len() {
                let mean = sum.data()[k] / draws as f64;
                let var = sq.data()[k] / draws as f64 - mean * mean;
                let se = (var / draws as f64).sqrt();
                assert!(
                    (mean - target.data()[k]).abs() <= 3.0 * se + 1e-12,
                    "rescale={rescale} entry {k}: {mean} vs {}",
                    target.data()[k]
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sketched_and_masked_core_forms_agree(seed in any::<u64>(), theta in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kernel: Vec<usize> = (0..4).map(|_| rng.random_range(1..5)).collect();
            let ranks: Vec<usize> = kernel.iter().map(|&d| rng.random_range(1..=d)).collect();
            let mut layer = random_layer(&kernel, &ranks, seed ^ 0x5eed);
            layer.rescale = rng.random_bool(0.5);
            layer.theta = theta;
            let masks = sample_masks(&ranks, theta, &mut rng).unwrap();
            let fast = randomized_weight(&layer, &masks).unwrap();
            let reference = randomized_weight_reference(&layer, &masks).unwrap();
            prop_assert!(fast.max_abs_diff(&reference).unwrap() < 1e-12);
        }

        #[test]
        fn masking_twice_equals_masking_once(seed in any::<u64>()) {
            let layer = random_layer(&[3, 3, 2, 2], &[3, 2, 2, 2], seed);
            let masks = sample_masks_seeded(layer.ranks(), 0.6, seed).unwrap();
            let mask = masks.core_mask(1.0);
            let once = layer.factors().core().zip_map(&mask, |g, m| g * m).unwrap();
            let twice = once.zip_map(&mask, |g, m| g * m).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}

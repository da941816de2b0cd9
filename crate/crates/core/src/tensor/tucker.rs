//! Tucker decomposition: HOSVD initialization refined by HOOI sweeps.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops::{mode_product, relative_error, unfold};
use super::{DenseTensor, FactorMatrix};
use crate::error::{Error, Result};

/// Core tensor plus one factor matrix per mode; factor `n` is `(D_n, R_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    core: DenseTensor,
    factors: Vec<FactorMatrix>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<FactorMatrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} factors for an order-{} core",
                factors.len(),
                core.order()
            )));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != core.shape()[n] {
                return Err(Error::ShapeMismatch(format!(
                    "factor {n} has {} columns but core mode {n} has size {}",
                    f.cols(),
                    core.shape()[n]
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    /// Shape of the reconstructed tensor.
    pub fn full_shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn into_parts(self) -> (DenseTensor, Vec<FactorMatrix>) {
        (self.core, self.factors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Hosvd,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionOptions {
    pub ranks: Vec<usize>,
    /// HOOI sweeps after initialization; 0 gives plain HOSVD.
    pub max_iterations: usize,
    /// Stop once the relative reconstruction error changes by less than this.
    pub tolerance: f64,
    pub init: Init,
}

impl DecompositionOptions {
    pub fn new(ranks: Vec<usize>) -> Self {
        Self {
            ranks,
            max_iterations: 25,
            tolerance: 1e-10,
            init: Init::Hosvd,
        }
    }

    pub fn full_rank(shape: &[usize]) -> Self {
        Self::new(shape.to_vec())
    }

    /// `ceil(d / 2)` per mode.
    pub fn half_rank(shape: &[usize]) -> Self {
        Self::new(shape.iter().map(|d| d.div_ceil(2)).collect())
    }

    pub fn hosvd_only(mut self) -> Self {
        self.max_iterations = 0;
        self
    }

    fn validate(&self, shape: &[usize]) -> Result<()> {
        if self.ranks.len() != shape.len() {
            return Err(Error::InvalidRanks(format!(
                "{} ranks for an order-{} tensor",
                self.ranks.len(),
                shape.len()
            )));
        }
        for (n, (&r, &d)) in self.ranks.iter().zip(shape).enumerate() {
            if r == 0 || r > d {
                return Err(Error::InvalidRanks(format!(
                    "rank {r} for mode {n} must lie in [1, {d}]"
                )));
            }
        }
        Ok(())
    }
}

/// Relative reconstruction error after initialization and after each HOOI sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTrace {
    pub errors: Vec<f64>,
}

pub fn tucker_decompose(t: &DenseTensor, opts: &DecompositionOptions) -> Result<TuckerFactors> {
    tucker_decompose_traced(t, opts).map(|(f, _)| f)
}

pub fn tucker_decompose_traced(
    t: &DenseTensor,
    opts: &DecompositionOptions,
) -> Result<(TuckerFactors, DecompositionTrace)> {
    opts.validate(t.shape())?;
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("tensor contains non-finite values".into()));
    }
    let order = t.order();
    let mut factors = match opts.init {
        Init::Hosvd => (0..order)
            .map(|n| leading_subspace(&unfold(t, n)?, opts.ranks[n]))
            .collect::<Result<Vec<_>>>()?,
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            t.shape()
                .iter()
                .zip(&opts.ranks)
                .map(|(&d, &r)| random_orthonormal(d, r, &mut rng))
                .collect()
        }
    };

    let mut current = assemble(t, factors.clone())?;
    let mut errors = vec![relative_error(t, &tucker_reconstruct(&current)?)?];

    for _ in 0..opts.max_iterations {
        for n in 0..order {
            let mut projected = t.clone();
            for (m, u) in factors.iter().enumerate() {
                if m != n {
                    projected = mode_product(&projected, &u.transpose(), m)?;
                }
            }
            factors[n] = leading_subspace(&unfold(&projected, n)?, opts.ranks[n])?;
        }
        current = assemble(t, factors.clone())?;
        let err = relative_error(t, &tucker_reconstruct(&current)?)?;
        let prev = *errors.last().expect("errors is never empty");
        errors.push(err);
        if (prev - err).abs() < opts.tolerance {
            break;
        }
    }
    Ok((current, DecompositionTrace { errors }))
}

/// `G ×_0 U_0 ×_1 U_1 ... ×_N U_N`.
pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    let mut out = f.core.clone();
    for (n, u) in f.factors.iter().enumerate() {
        out = mode_product(&out, u, n)?;
    }
    Ok(out)
}

fn assemble(t: &DenseTensor, factors: Vec<FactorMatrix>) -> Result<TuckerFactors> {
    let mut core = t.clone();
    for (n, u) in factors.iter().enumerate() {
        core = mode_product(&core, &u.transpose(), n)?;
    }
    TuckerFactors::new(core, factors)
}

/// Top-`rank` left singular vectors of `m`, taken as the leading eigenvectors
/// of the Gram matrix `m·mᵀ`. The Gram route always yields a full orthonormal
/// basis, so ranks above the column count of a short unfolding still work.
fn leading_subspace(m: &FactorMatrix, rank: usize) -> Result<FactorMatrix> {
    let a = m.to_nalgebra();
    let gram = &a * a.transpose();
    let eig = SymmetricEigen::try_new(gram, 1e-15, 10_000)
        .ok_or_else(|| Error::Decomposition("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let rows = m.rows();
    let mut out = FactorMatrix::zeros(rows, rank);
    for (c, &k) in order.iter().take(rank).enumerate() {
        let col = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..rows)
            .max_by(|&i, &j| col[i].abs().partial_cmp(&col[j].abs()).unwrap())
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..rows {
            out.set(r, c, sign * col[r]);
        }
    }
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("non-finite singular vectors".into()));
    }
    Ok(out)
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FactorMatrix {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    FactorMatrix::from_nalgebra(&q.columns(0, cols).into_owned())
}

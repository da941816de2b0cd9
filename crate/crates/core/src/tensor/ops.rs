use super::{DenseTensor, FactorMatrix};
use crate::error::{Error, Result};
use crate::linalg::gemm;

/// Splits a shape around `mode` into (product before, dim, product after).
fn split_dims(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let before = shape[..mode].iter().product();
    let after = shape[mode + 1..].iter().product();
    (before, shape[mode], after)
}

fn check_mode(order: usize, mode: usize) -> Result<()> {
    if mode >= order {
        return Err(Error::InvalidMode { mode, order });
    }
    Ok(())
}

/// Mode-`mode` unfolding.
///
/// Row `i` collects every entry whose `mode` index is `i`. Columns enumerate
/// the remaining indices in row-major order of the remaining modes (earlier
/// modes vary slowest, the last mode fastest), which makes [`fold`] a plain
/// scatter back into row-major storage.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<FactorMatrix> {
    check_mode(t.order(), mode)?;
    let (before, dim, after) = split_dims(t.shape(), mode);
    let cols = before * after;
    let src = t.data();
    let mut out = vec![0.0; dim * cols];
    for a in 0..before {
        for i in 0..dim {
            let s = (a * dim + i) * after;
            let d = i * cols + a * after;
            out[d..d + after].copy_from_slice(&src[s..s + after]);
        }
    }
    FactorMatrix::new(dim, cols, out)
}

/// Inverse of [`unfold`] for the same mode and target shape.
pub fn fold(m: &FactorMatrix, mode: usize, target_shape: &[usize]) -> Result<DenseTensor> {
    check_mode(target_shape.len(), mode)?;
    let (before, dim, after) = split_dims(target_shape, mode);
    if m.rows() != dim || m.cols() != before * after {
        return Err(Error::ShapeMismatch(format!(
            "cannot fold a {}x{} matrix into {:?} at mode {}",
            m.rows(),
            m.cols(),
            target_shape,
            mode
        )));
    }
    let cols = m.cols();
    let src = m.data();
    let mut out = vec![0.0; src.len()];
    for a in 0..before {
        for i in 0..dim {
            let d = (a * dim + i) * after;
            let s = i * cols + a * after;
            out[d..d + after].copy_from_slice(&src[s..s + after]);
        }
    }
    DenseTensor::new(target_shape.to_vec(), out)
}

/// n-mode product `t ×_mode m`: `out[.., r, ..] = Σ_k m[r, k] · t[.., k, ..]`.
pub fn mode_product(t: &DenseTensor, m: &FactorMatrix, mode: usize) -> Result<DenseTensor> {
    check_mode(t.order(), mode)?;
    let (before, dim, after) = split_dims(t.shape(), mode);
    if m.cols() != dim {
        return Err(Error::ShapeMismatch(format!(
            "matrix with {} columns cannot contract mode {} of size {}",
            m.cols(),
            mode,
            dim
        )));
    }
    let rows = m.rows();
    let mut shape = t.shape().to_vec();
    shape[mode] = rows;
    let mut out = vec![0.0; before * rows * after];
    let src = t.data();
    if after < 16 && rows * dim <= 256 {
        // many tiny blocks: a direct loop beats per-block gemm dispatch
        for a in 0..before {
            let block = &src[a * dim * after..(a + 1) * dim * after];
            let dst = &mut out[a * rows * after..(a + 1) * rows * after];
            for r in 0..rows {
                let row = &m.data()[r * dim..(r + 1) * dim];
                let o = &mut dst[r * after..(r + 1) * after];
                for (k, &c) in row.iter().enumerate() {
                    for (ov, sv) in o.iter_mut().zip(&block[k * after..(k + 1) * after]) {
                        *ov += c * sv;
                    }
                }
            }
        }
        return DenseTensor::new(shape, out);
    }
    for a in 0..before {
        gemm(
            rows,
            dim,
            after,
            m.data(),
            false,
            &src[a * dim * after..(a + 1) * dim * after],
            false,
            &mut out[a * rows * after..(a + 1) * rows * after],
            0.0,
        );
    }
    DenseTensor::new(shape, out)
}

/// Applies a sequence of n-mode products. Modes must be distinct.
pub fn multi_mode_product(t: &DenseTensor, factors: &[(&FactorMatrix, usize)]) -> Result<DenseTensor> {
    let mut seen = vec![false; t.order()];
    for &(_, mode) in factors {
        check_mode(t.order(), mode)?;
        if seen[mode] {
            return Err(Error::RepeatedMode(mode));
        }
        seen[mode] = true;
    }
    let mut out = t.clone();
    for &(m, mode) in factors {
        out = mode_product(&out, m, mode)?;
    }
    Ok(out)
}

/// `‖a − b‖_F / ‖a‖_F`.
///
/// When `a` is identically zero the denominator is dropped and `‖b‖_F` is
/// returned, so two zero tensors compare as 0.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    let diff = a.sub(b)?.frobenius_norm();
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        Ok(diff)
    } else {
        Ok(diff / norm)
    }
}

//! Batched 2-D convolution (cross-correlation) via im2col and gemm.
//!
//! Inputs are `(N, C, H, W)`, kernels `(F, C, KH, KW)`, outputs
//! `(N, F, HO, WO)`. Padding is zero padding. A 1-D convolution is the
//! `H = KH = 1` special case.

use crate::error::{Error, Result};
use crate::factorized::ConvGeometry;
use crate::linalg::gemm;
use crate::tensor::DenseTensor;

pub fn output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::ShapeMismatch("stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(Error::ShapeMismatch(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    g: ConvGeometry,
}

impl Dims {
    fn new(x: &[usize], k: &[usize], g: ConvGeometry) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects order-4 input and kernel, got {x:?} and {k:?}"
            )));
        }
        if x[1] != k[1] {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels but kernel expects {}",
                x[1], k[1]
            )));
        }
        Ok(Self {
            c: x[1],
            h: x[2],
            w: x[3],
            kh: k[2],
            kw: k[3],
            ho: output_size(x[2], k[2], g.stride.0, g.padding.0)?,
            wo: output_size(x[3], k[3], g.stride.1, g.padding.1)?,
            g,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Maps (output position, kernel offset) to an input coordinate, if in bounds.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.g.stride.0 + ky).checked_sub(self.g.padding.0)?;
        let x = (ox * self.g.stride.1 + kx).checked_sub(self.g.padding.1)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Patch matrix of one sample: `(C·KH·KW) × (HO·WO)`.
fn im2col(d: &Dims, sample: &[f64], cols: &mut [f64]) {
    let p = d.positions();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        dst[oy * d.wo + ox] = match d.source(oy, ox, ky, kx) {
                            Some((y, x)) => sample[(c * d.h + y) * d.w + x],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

fn col2im(d: &Dims, cols: &[f64], sample: &mut [f64]) {
    let p = d.positions();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        if let Some((y, x)) = d.source(oy, ox, ky, kx) {
                            sample[(c * d.h + y) * d.w + x] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(x: &DenseTensor, k: &DenseTensor, g: ConvGeometry) -> Result<DenseTensor> {
    let d = Dims::new(x.shape(), k.shape(), g)?;
    let n = x.shape()[0];
    let f = k.shape()[0];
    let (patch, p) = (d.patch(), d.positions());
    let in_len = d.c * d.h * d.w;
    let mut cols = vec![0.0; patch * p];
    let mut out = vec![0.0; n * f * p];
    for s in 0..n {
        im2col(&d, &x.data()[s * in_len..(s + 1) * in_len], &mut cols);
        gemm(
            f,
            patch,
            p,
            k.data(),
            false,
            &cols,
            false,
            &mut out[s * f * p..(s + 1) * f * p],
            0.0,
        );
    }
    DenseTensor::new(vec![n, f, d.ho, d.wo], out)
}

/// Gradients of [`conv2d`] with respect to its input and kernel. Either can be
/// skipped.
pub fn conv2d_backward(
    x: &DenseTensor,
    k: &DenseTensor,
    g: ConvGeometry,
    grad_out: &DenseTensor,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<DenseTensor>, Option<DenseTensor>)> {
    let d = Dims::new(x.shape(), k.shape(), g)?;
    let n = x.shape()[0];
    let f = k.shape()[0];
    let (patch, p) = (d.patch(), d.positions());
    let in_len = d.c * d.h * d.w;
    let mut cols = vec![0.0; patch * p];
    let mut dcols = vec![0.0; patch * p];
    let mut dx = need_input.then(|| vec![0.0; x.len()]);
    let mut dk = need_kernel.then(|| vec![0.0; k.len()]);
    for s in 0..n {
        let go = &grad_out.data()[s * f * p..(s + 1) * f * p];
        if let Some(dk) = dk.as_mut() {
            im2col(&d, &x.data()[s * in_len..(s + 1) * in_len], &mut cols);
            // dK (F×patch) += dY (F×P) · colsᵀ
            gemm(f, p, patch, go, false, &cols, true, dk, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols (patch×P) = Kᵀ · dY
            gemm(patch, f, p, k.data(), true, go, false, &mut dcols, 0.0);
            col2im(&d, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    let dx = dx.map(|v| DenseTensor::new(x.shape().to_vec(), v)).transpose()?;
    let dk = dk.map(|v| DenseTensor::new(k.shape().to_vec(), v)).transpose()?;
    Ok((dx, dk))
}

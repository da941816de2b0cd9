//! Loss surfaces around one input along the gradient direction and a random
//! orthogonal direction.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use super::seeds::stream;
use crate::attacks::PassKind;
use crate::error::{Error, Result};
use crate::nn::{ForwardMode, Model};
use crate::tensor::DenseTensor;

pub const DEFAULT_RESOLUTION: usize = 41;
pub const DEFAULT_RANGE: (f64, f64) = (-0.5, 0.5);

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub n: usize,
    pub range: (f64, f64),
    /// Unit input gradient at `x`.
    pub d_grad: DenseTensor,
    /// Unit direction orthogonal to `d_grad`.
    pub d_orth: DenseTensor,
    /// Row-major over `(u, v)`: `losses[i * n + j]` is the loss at
    /// `x + coord(i) d_grad + coord(j) d_orth`.
    pub losses: Vec<f64>,
}

impl LandscapeGrid {
    pub fn coord(&self, i: usize) -> f64 {
        grid_coord(self.range, self.n, i)
    }

    /// `u,v,loss` rows in grid order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v", "loss"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for i in 0..self.n {
            for j in 0..self.n {
                w.write_record([
                    self.coord(i).to_string(),
                    self.coord(j).to_string(),
                    self.losses[i * self.n + j].to_string(),
                ])
                .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn grid_coord(range: (f64, f64), n: usize, i: usize) -> f64 {
    range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
}

/// Evaluates the loss over an `n × n` grid. The gradient direction always
/// comes from the deterministic network; `loss_pass` selects how grid points
/// are scored (randomized passes draw from a stream keyed by the grid cell).
pub fn loss_landscape(
    model: &Model,
    x: &DenseTensor,
    label: usize,
    n: usize,
    range: (f64, f64),
    loss_pass: PassKind,
    seed: u64,
) -> Result<LandscapeGrid> {
    if n < 2 {
        return Err(Error::Config(format!("landscape resolution {n} must be at least 2")));
    }
    if !(range.0 < range.1) {
        return Err(Error::Config(format!("landscape range {range:?} is empty")));
    }
    let mut batch_shape = vec![1];
    batch_shape.extend_from_slice(x.shape());
    let xb = x.reshape(&batch_shape)?;
    let mut rng = stream(seed, "landscape", &[]);
    let (_, g) = model.loss_and_input_grad(&xb, &[label], ForwardMode::Deterministic, &mut rng)?;
    let gnorm = g.frobenius_norm();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return Err(Error::Numeric(format!(
            "input gradient norm is {gnorm}; cannot normalize"
        )));
    }
    let d_grad = g.scale(1.0 / gnorm);
    let d_orth = loop {
        let r = DenseTensor::from_fn(d_grad.shape(), |_| rng.sample(StandardNormal));
        // two Gram-Schmidt passes keep the residual overlap at rounding level
        let mut o = r;
        for _ in 0..2 {
            let p = o.dot(&d_grad)?;
            o = o.sub(&d_grad.scale(p))?;
        }
        let on = o.frobenius_norm();
        if on > 1e-8 {
            break o.scale(1.0 / on);
        }
    };
    let mode = match loss_pass {
        PassKind::Deterministic => ForwardMode::Deterministic,
        PassKind::Randomized => ForwardMode::Randomized,
    };
    let mut losses = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (u, v) = (grid_coord(range, n, i), grid_coord(range, n, j));
            let p = xb.zip_map(&d_grad.reshape(&batch_shape)?, |a, d| a + u * d)?;
            let p = p.zip_map(&d_orth.reshape(&batch_shape)?, |a, d| a + v * d)?;
            let mut cell_rng = stream(seed, "landscape-cell", &[i as u64, j as u64]);
            losses.push(model.loss(&p, &[label], mode, &mut cell_rng)?);
        }
    }
    Ok(LandscapeGrid {
        n,
        range,
        d_grad,
        d_orth,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::load_dataset;
    use crate::nn::build_model;

    #[test]
    fn grid_contract() {
        let test = load_dataset(&Default::default()).unwrap().test;
        let model = Model::new(build_model("small-cnn-2d").unwrap(), 1).unwrap();
        let (x, y) = test.example(0);
        let grid = loss_landscape(&model, &x, y, 5, DEFAULT_RANGE, PassKind::Deterministic, 3).unwrap();
        assert_eq!(grid.losses.len(), 25);
        assert_eq!(grid.coord(2), 0.0);
        let mut rng = stream(0, "x", &[]);
        let clean = model
            .loss(
                &x.reshape(&[1, 1, 8, 8]).unwrap(),
                &[y],
                ForwardMode::Deterministic,
                &mut rng,
            )
            .unwrap();
        assert!((grid.losses[2 * 5 + 2] - clean).abs() < 1e-12);
        assert!(grid.d_grad.dot(&grid.d_orth).unwrap().abs() < 1e-10);
        assert!((grid.d_orth.frobenius_norm() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.starts_with("u,v,loss\n-0.5,-0.5,"));
        assert!(loss_landscape(&model, &x, y, 1, DEFAULT_RANGE, PassKind::Deterministic, 3).is_err());
    }

    #[test]
    fn zero_gradient_is_reported() {
        let test = load_dataset(&Default::default()).unwrap().test;
        let mut model = Model::new(build_model("small-cnn-2d").unwrap(), 1).unwrap();
        let zeros = vec![0.0; model.parameter_count()];
        model.set_flat_values(&zeros).unwrap();
        let (x, y) = test.example(0);
        assert!(matches!(
            loss_landscape(&model, &x, y, 3, DEFAULT_RANGE, PassKind::Deterministic, 0),
            Err(Error::Numeric(_))
        ));
    }
}

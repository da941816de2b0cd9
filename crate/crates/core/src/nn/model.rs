//! Trainable networks built from a [`ModelSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::spec::{KernelKind, LayerSpec, ModelSpec};
use super::tape::{SignForward, Tape, Var};
use crate::binary::SteVariant;
use crate::error::{Error, Result};
use crate::factorized::{init_from_dense, sample_masks, survivor_scale, ConvGeometry, DropoutMasks};
use crate::tensor::{tucker_reconstruct, DenseTensor, FactorMatrix, TuckerFactors};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: DenseTensor,
    pub grad: DenseTensor,
    pub momentum: DenseTensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseTensor) -> Self {
        let grad = DenseTensor::zeros(value.shape());
        let momentum = grad.clone();
        Self {
            name: name.into(),
            value,
            grad,
            momentum,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Kernel source for one forward pass through the factorized layers.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode<'a> {
    /// Full cores, no dropout.
    Deterministic,
    /// Fresh masks per factorized layer from the supplied RNG.
    Randomized,
    /// One mask set per factorized layer, in layer order.
    Replay(&'a [DropoutMasks]),
}

/// Which leaves of the forward pass record gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub sign: SignForward,
    pub input_grad: bool,
    pub param_grad: bool,
}

impl ForwardOptions {
    pub const INFERENCE: Self = Self {
        sign: SignForward::Hard,
        input_grad: false,
        param_grad: false,
    };
    pub const TRAIN: Self = Self {
        sign: SignForward::Hard,
        input_grad: false,
        param_grad: true,
    };
    pub const INPUT_GRAD: Self = Self {
        sign: SignForward::Hard,
        input_grad: true,
        param_grad: false,
    };
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub input: Var,
    pub logits: Var,
    /// Masks used by each factorized layer; empty when deterministic.
    pub masks: Vec<DropoutMasks>,
    params: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub input: Option<DenseTensor>,
    /// Per layer, per parameter.
    pub params: Vec<Vec<Option<DenseTensor>>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &DenseTensor {
        self.tape.value(self.logits)
    }

    /// Mean cross-entropy of the logits followed by the reverse sweep.
    pub fn backward(&mut self, labels: &[usize]) -> Result<(f64, ModelGradients)> {
        let loss = self.tape.cross_entropy(self.logits, labels)?;
        let value = self.tape.value(loss).data()[0];
        let mut grads = self.tape.backward(loss)?;
        let input = grads.take(self.input);
        let params = self
            .params
            .iter()
            .map(|layer| layer.iter().map(|&v| grads.take(v)).collect())
            .collect();
        Ok((value, ModelGradients { input, params }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    /// Parameters of `spec.layers[i]`; empty for stateless layers.
    params: Vec<Vec<Parameter>>,
    pub theta: f64,
    pub rescale: bool,
    pub ste: SteVariant,
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    let std = (2.0 / fan_in as f64).sqrt();
    DenseTensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn tucker_params(prefix: &str, dense: &DenseTensor, ranks: &[usize]) -> Result<Vec<Parameter>> {
    let layer = init_from_dense(dense, ranks, 1.0)?;
    let (core, factors) = layer.factors().clone().into_parts();
    let mut out = vec![Parameter::new(format!("{prefix}.core"), core)];
    for (n, u) in factors.iter().enumerate() {
        out.push(Parameter::new(format!("{prefix}.factor{n}"), u.to_tensor()));
    }
    Ok(out)
}

fn geometry(stride: [usize; 2], padding: [usize; 2]) -> ConvGeometry {
    ConvGeometry {
        stride: (stride[0], stride[1]),
        padding: (padding[0], padding[1]),
    }
}

impl Model {
    /// He-normal initialization; factorized kernels start as the Tucker
    /// decomposition of a He-normal dense kernel.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let prefix = format!("layer{i}");
            let p = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel_kind,
                    ..
                } => {
                    let shape = layer.kernel_shape().expect("conv");
                    let fan_in = shape[1] * shape[2] * shape[3];
                    let dense = he_normal(&shape, fan_in, &mut rng);
                    let mut p = match kernel_kind.ranks() {
                        Some(ranks) => tucker_params(&prefix, &dense, ranks)?,
                        None => vec![Parameter::new(format!("{prefix}.weight"), dense)],
                    };
                    p.push(Parameter::new(
                        format!("{prefix}.bias"),
                        DenseTensor::zeros(&[*out_channels]),
                    ));
                    p
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => vec![
                    Parameter::new(
                        format!("{prefix}.weight"),
                        he_normal(&[*out_features, *in_features], *in_features, &mut rng),
                    ),
                    Parameter::new(format!("{prefix}.bias"), DenseTensor::zeros(&[*out_features])),
                ],
                _ => Vec::new(),
            };
            params.push(p);
        }
        Ok(Self {
            spec,
            params,
            theta: 1.0,
            rescale: false,
            ste: SteVariant::default(),
        })
    }

    pub fn with_dropout(mut self, theta: f64, rescale: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidProbability(theta));
        }
        self.theta = theta;
        self.rescale = rescale;
        Ok(self)
    }

    pub fn with_ste(mut self, ste: SteVariant) -> Self {
        self.ste = ste;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<Parameter>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut().flatten()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.value.len()).sum()
    }

    /// Replaces parameter values, matched by name.
    pub fn load_values(&mut self, mut values: std::collections::HashMap<String, DenseTensor>) -> Result<()> {
        for p in self.params_mut() {
            let v = values
                .remove(&p.name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{}`", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{}`: stored {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        if let Some(extra) = values.keys().next() {
            return Err(Error::Format(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// The dense kernel of every convolution (deterministic reconstruction
    /// for factorized layers), in layer order.
    pub fn dense_kernels(&self) -> Result<Vec<DenseTensor>> {
        let mut out = Vec::new();
        for (layer, p) in self.spec.layers.iter().zip(&self.params) {
            if let LayerSpec::Conv { kernel_kind, .. } = layer {
                out.push(dense_kernel(kernel_kind, p)?);
            }
        }
        Ok(out)
    }

    /// Builds a model for `target` from this one's weights. Parametrized
    /// layers are matched in order and must agree in shape; factorized
    /// targets are initialized by decomposing the source kernel.
    pub fn convert(&self, target: ModelSpec) -> Result<Model> {
        target.validate()?;
        let src: Vec<(&LayerSpec, &Vec<Parameter>)> = self
            .spec
            .layers
            .iter()
            .zip(&self.params)
            .filter(|(_, p)| !p.is_empty())
            .collect();
        let mut params = Vec::with_capacity(target.layers.len());
        let mut next = src.into_iter();
        for (i, layer) in target.layers.iter().enumerate() {
            let prefix = format!("layer{i}");
            let p = match layer {
                LayerSpec::Conv { kernel_kind, .. } => {
                    let (src_layer, src_params) = next
                        .next()
                        .ok_or_else(|| Error::InvalidModel("target has more layers than source".into()))?;
                    let LayerSpec::Conv {
                        kernel_kind: src_kind, ..
                    } = src_layer
                    else {
                        return Err(Error::InvalidModel(format!("layer {i}: source is not a convolution")));
                    };
                    let dense = dense_kernel(src_kind, src_params)?;
                    if Some(dense.shape()) != layer.kernel_shape().as_ref().map(|s| &s[..]) {
                        return Err(Error::InvalidModel(format!("layer {i}: kernel shapes differ")));
                    }
                    let mut p = match kernel_kind.ranks() {
                        Some(ranks) => tucker_params(&prefix, &dense, ranks)?,
                        None => vec![Parameter::new(format!("{prefix}.weight"), dense)],
                    };
                    let bias = src_params.last().expect("bias").value.clone();
                    p.push(Parameter::new(format!("{prefix}.bias"), bias));
                    p
                }
                LayerSpec::Linear { .. } => {
                    let (src_layer, src_params) = next
                        .next()
                        .ok_or_else(|| Error::InvalidModel("target has more layers than source".into()))?;
                    if src_layer != layer {
                        return Err(Error::InvalidModel(format!("layer {i}: linear layers differ")));
                    }
                    vec![
                        Parameter::new(format!("{prefix}.weight"), src_params[0].value.clone()),
                        Parameter::new(format!("{prefix}.bias"), src_params[1].value.clone()),
                    ]
                }
                _ => Vec::new(),
            };
            params.push(p);
        }
        if next.next().is_some() {
            return Err(Error::InvalidModel("source has more layers than target".into()));
        }
        Ok(Model {
            spec: target,
            params,
            theta: self.theta,
            rescale: self.rescale,
            ste: self.ste,
        })
    }

    /// Draws one mask set per factorized layer.
    pub fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<DropoutMasks>> {
        self.spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { kernel_kind, .. } => kernel_kind.ranks(),
                _ => None,
            })
            .map(|ranks| sample_masks(ranks, self.theta, rng))
            .collect()
    }

    /// Records a forward pass of a batch `x` shaped `(N, C, H, W)`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &DenseTensor,
        mode: ForwardMode<'_>,
        rng: &mut R,
        opts: ForwardOptions,
    ) -> Result<ForwardPass> {
        if x.order() != 4 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "model `{}` expects (N, {:?}), got {:?}",
                self.spec.name,
                self.spec.input_shape,
                x.shape()
            )));
        }
        let masks = match mode {
            ForwardMode::Deterministic => Vec::new(),
            ForwardMode::Randomized => self.sample_masks(rng)?,
            ForwardMode::Replay(m) => {
                if m.len() != self.spec.tucker_layer_count() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} mask sets for {} factorized layers",
                        m.len(),
                        self.spec.tucker_layer_count()
                    )));
                }
                m.to_vec()
            }
        };
        let scale = survivor_scale(self.theta, self.rescale, 4);
        let mut tape = Tape::new().with_sign_forward(opts.sign);
        let input = tape.leaf(x.clone(), opts.input_grad);
        let mut h = input;
        let mut param_vars = Vec::with_capacity(self.params.len());
        let mut mask_iter = masks.iter();
        for (layer, params) in self.spec.layers.iter().zip(&self.params) {
            let vars: Vec<Var> = params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), opts.param_grad))
                .collect();
            h = match layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    padding,
                    kernel_kind,
                    ..
                } => {
                    let g = geometry(*stride, *padding);
                    let kernel_var = if kernel_kind.is_factorized() {
                        let mut core = vars[0];
                        if !masks.is_empty() {
                            let m = mask_iter.next().expect("mask count checked");
                            core = tape.mul_const(core, m.core_mask(scale))?;
                        }
                        for n in 0..4 {
                            core = tape.mode_product(core, vars[1 + n], n)?;
                        }
                        core
                    } else {
                        vars[0]
                    };
                    let out = if kernel_kind.is_binary() {
                        binary_conv(&mut tape, h, kernel_var, *kernel, g, self.ste)?
                    } else {
                        tape.conv2d(h, kernel_var, g)?
                    };
                    tape.add_bias(out, *vars.last().expect("bias"))?
                }
                LayerSpec::Relu => tape.relu(h),
                LayerSpec::MaxPool { kernel, stride } => {
                    tape.max_pool(h, (kernel[0], kernel[1]), (stride[0], stride[1]))?
                }
                LayerSpec::Flatten => {
                    let v = tape.value(h);
                    let n = v.shape()[0];
                    let rest = v.len() / n;
                    tape.reshape(h, &[n, rest])?
                }
                LayerSpec::Linear { .. } => {
                    let y = tape.linear(h, vars[0])?;
                    tape.add_bias(y, vars[1])?
                }
            };
            param_vars.push(vars);
        }
        Ok(ForwardPass {
            tape,
            input,
            logits: h,
            masks,
            params: param_vars,
        })
    }

    pub fn logits<R: Rng + ?Sized>(&self, x: &DenseTensor, mode: ForwardMode<'_>, rng: &mut R) -> Result<DenseTensor> {
        let pass = self.forward(x, mode, rng, ForwardOptions::INFERENCE)?;
        Ok(pass.logits().clone())
    }

    pub fn predict<R: Rng + ?Sized>(&self, x: &DenseTensor, mode: ForwardMode<'_>, rng: &mut R) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x, mode, rng)?))
    }

    /// Mean cross-entropy and its gradient with respect to the input batch.
    pub fn loss_and_input_grad<R: Rng + ?Sized>(
        &self,
        x: &DenseTensor,
        labels: &[usize],
        mode: ForwardMode<'_>,
        rng: &mut R,
    ) -> Result<(f64, DenseTensor)> {
        let mut pass = self.forward(x, mode, rng, ForwardOptions::INPUT_GRAD)?;
        let (loss, grads) = pass.backward(labels)?;
        let g = grads.input.expect("input requires grad");
        Ok((loss, g))
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        x: &DenseTensor,
        labels: &[usize],
        mode: ForwardMode<'_>,
        rng: &mut R,
    ) -> Result<f64> {
        let mut pass = self.forward(x, mode, rng, ForwardOptions::INFERENCE)?;
        let loss = pass.tape.cross_entropy(pass.logits, labels)?;
        Ok(pass.tape.value(loss).data()[0])
    }

    /// Adds `grads.params` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &ModelGradients) -> Result<()> {
        for (layer, gs) in self.params.iter_mut().zip(&grads.params) {
            for (p, g) in layer.iter_mut().zip(gs) {
                if let Some(g) = g {
                    p.grad.add_assign(g)?;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Parameter::zero_grad);
    }

    /// Flat copy of every parameter value, in a fixed order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parameter_count();
        if flat.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {total} parameters",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn dense_kernel(kind: &KernelKind, params: &[Parameter]) -> Result<DenseTensor> {
    if kind.is_factorized() {
        let factors = params[1..5]
            .iter()
            .map(|p| FactorMatrix::from_tensor(&p.value))
            .collect::<Result<Vec<_>>>()?;
        tucker_reconstruct(&TuckerFactors::new(params[0].value.clone(), factors)?)
    } else {
        Ok(params[0].value.clone())
    }
}

/// `(sgn(x) ⊛ sgn(w)) ⊙ K · α` with `K` the box-filtered channel mean of
/// `|x|` and `α` the per-filter mean of `|w|`.
fn binary_conv(tape: &mut Tape, x: Var, w: Var, kernel: [usize; 2], g: ConvGeometry, ste: SteVariant) -> Result<Var> {
    let sw = tape.sign(w, ste);
    let abs_w = tape.abs(w);
    let alpha = tape.filter_mean(abs_w);
    let sx = tape.sign(x, ste);
    let abs_x = tape.abs(x);
    let a = tape.channel_mean(abs_x)?;
    let box_kernel = tape.constant(DenseTensor::filled(
        &[1, 1, kernel[0], kernel[1]],
        1.0 / (kernel[0] * kernel[1]) as f64,
    ));
    let k = tape.conv2d(a, box_kernel, g)?;
    let raw = tape.conv2d(sx, sw, g)?;
    let scaled = tape.scale_spatial(raw, k)?;
    tape.scale_channels(scaled, alpha)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(logits: &DenseTensor) -> Vec<usize> {
    let k = logits.shape()[logits.order() - 1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

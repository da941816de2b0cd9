//! Layer-graph descriptions and the built-in model zoo.

use serde::{Deserialize, Serialize};

use crate::conv::output_size;
use crate::error::{Error, Result};

/// How a convolution kernel is parametrized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    Plain,
    /// Tucker core plus factors with latent dropout.
    Tucker {
        ranks: Vec<usize>,
    },
    /// XNOR-style binarized kernel and activations.
    Binary,
    /// Binarization applied to the randomized Tucker reconstruction.
    BinaryTucker {
        ranks: Vec<usize>,
    },
}

impl KernelKind {
    pub fn ranks(&self) -> Option<&[usize]> {
        match self {
            Self::Tucker { ranks } | Self::BinaryTucker { ranks } => Some(ranks),
            _ => None,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Self::Binary | Self::BinaryTucker { .. })
    }

    pub fn is_factorized(&self) -> bool {
        self.ranks().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
        kernel_kind: KernelKind,
    },
    Relu,
    MaxPool {
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Self {
        Self::Conv {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            kernel_kind: KernelKind::Plain,
        }
    }

    /// `(F, C, KH, KW)` for convolutions.
    pub fn kernel_shape(&self) -> Option<[usize; 4]> {
        match self {
            Self::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some([*out_channels, *in_channels, kernel[0], kernel[1]]),
            _ => None,
        }
    }
}

/// A feed-forward classifier: input shape `(C, H, W)` without the batch axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Checks layer compatibility and returns the per-sample output shape of
    /// every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |msg: String| Error::InvalidModel(format!("{}: {msg}", self.name));
        if self.input_shape.len() != 3 || self.input_shape.contains(&0) {
            return Err(bad(format!("input shape {:?} is not (C, H, W)", self.input_shape)));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    kernel_kind,
                } => {
                    if shape.len() != 3 || shape[0] != *in_channels {
                        return Err(bad(format!(
                            "layer {i}: conv expects {in_channels} channels, got {shape:?}"
                        )));
                    }
                    if let Some(ranks) = kernel_kind.ranks() {
                        let dims = [*out_channels, *in_channels, kernel[0], kernel[1]];
                        if ranks.len() != 4 || ranks.iter().zip(dims).any(|(&r, d)| r == 0 || r > d) {
                            return Err(bad(format!("layer {i}: ranks {ranks:?} invalid for kernel {dims:?}")));
                        }
                    }
                    let ho = output_size(shape[1], kernel[0], stride[0], padding[0])
                        .map_err(|e| bad(format!("layer {i}: {e}")))?;
                    let wo = output_size(shape[2], kernel[1], stride[1], padding[1])
                        .map_err(|e| bad(format!("layer {i}: {e}")))?;
                    vec![*out_channels, ho, wo]
                }
                LayerSpec::Relu => shape,
                LayerSpec::MaxPool { kernel, stride } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("layer {i}: max pool on {shape:?}")));
                    }
                    let ho =
                        output_size(shape[1], kernel[0], stride[0], 0).map_err(|e| bad(format!("layer {i}: {e}")))?;
                    let wo =
                        output_size(shape[2], kernel[1], stride[1], 0).map_err(|e| bad(format!("layer {i}: {e}")))?;
                    vec![shape[0], ho, wo]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    if shape.len() != 1 || shape[0] != *in_features {
                        return Err(bad(format!("layer {i}: linear expects [{in_features}], got {shape:?}")));
                    }
                    vec![*out_features]
                }
            };
            shapes.push(shape.clone());
        }
        if shape != [self.classes] {
            return Err(bad(format!(
                "network must end in a single head of {} classes, ends with {shape:?}",
                self.classes
            )));
        }
        Ok(shapes)
    }

    /// Indices (into `layers`) of every convolution.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces each convolution's kernel kind. `choose` receives the
    /// convolution ordinal (0 for the first conv) and its `(F, C, KH, KW)`.
    pub fn with_kernel_kinds(&self, mut choose: impl FnMut(usize, [usize; 4]) -> KernelKind) -> Self {
        let mut out = self.clone();
        let mut ordinal = 0;
        for layer in out.layers.iter_mut() {
            let shape = layer.kernel_shape();
            if let (LayerSpec::Conv { kernel_kind, .. }, Some(shape)) = (layer, shape) {
                *kernel_kind = choose(ordinal, shape);
                ordinal += 1;
            }
        }
        out
    }

    pub fn tucker_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { kernel_kind, .. } if kernel_kind.is_factorized()))
            .count()
    }
}

impl ModelSpec {
    /// XNOR-style variant: convolutions become `kind(ordinal, shape)` except
    /// the first when `keep_first_real` is set; linear layers stay real. The
    /// ReLU feeding each binary convolution is dropped so the sign
    /// activation sees signed values (after a ReLU every sign would be +1).
    pub fn binarized(&self, keep_first_real: bool, mut kind: impl FnMut(usize, [usize; 4]) -> KernelKind) -> ModelSpec {
        let mut out = self.with_kernel_kinds(|i, shape| {
            if i == 0 && keep_first_real {
                KernelKind::Plain
            } else {
                kind(i, shape)
            }
        });
        let mut drop = vec![false; out.layers.len()];
        for (j, layer) in out.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Conv { kernel_kind, .. } if kernel_kind.is_binary()) {
                let mut i = j;
                while i > 0 && matches!(out.layers[i - 1], LayerSpec::Relu | LayerSpec::MaxPool { .. }) {
                    i -= 1;
                    if out.layers[i] == LayerSpec::Relu {
                        drop[i] = true;
                    }
                }
            }
        }
        let mut keep = drop.iter().map(|d| !d);
        out.layers.retain(|_| keep.next().unwrap_or(true));
        out
    }
}

/// `ceil(fraction · d)` per mode, clamped to `[1, d]`.
pub fn ranks_from_fraction(shape: [usize; 4], fraction: f64) -> Vec<usize> {
    shape
        .iter()
        .map(|&d| ((d as f64 * fraction).ceil() as usize).clamp(1, d))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnnOptions {
    pub input_channels: usize,
    pub input_size: [usize; 2],
    pub widths: [usize; 3],
    pub hidden: usize,
    pub classes: usize,
}

impl Default for SmallCnnOptions {
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_size: [8, 8],
            widths: [16, 32, 32],
            hidden: 64,
            classes: 4,
        }
    }
}

/// Three `conv3x3 → ReLU → maxpool2` blocks followed by two linear layers.
pub fn small_cnn_2d(opts: &SmallCnnOptions) -> Result<ModelSpec> {
    let mut layers = Vec::new();
    let mut channels = opts.input_channels;
    let (mut h, mut w) = (opts.input_size[0], opts.input_size[1]);
    for &width in &opts.widths {
        layers.push(LayerSpec::conv(channels, width, [3, 3], [1, 1], [1, 1]));
        layers.push(LayerSpec::Relu);
        let pool = [2.min(h), 2.min(w)];
        layers.push(LayerSpec::MaxPool {
            kernel: pool,
            stride: pool,
        });
        h /= pool[0];
        w /= pool[1];
        channels = width;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear {
        in_features: channels * h * w,
        out_features: opts.hidden,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Linear {
        in_features: opts.hidden,
        out_features: opts.classes,
    });
    let spec = ModelSpec {
        name: "small-cnn-2d".into(),
        input_shape: vec![opts.input_channels, opts.input_size[0], opts.input_size[1]],
        classes: opts.classes,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Pool width after each SoundNet5 convolution. With a 16 000-sample input
/// these leave 256 channels × 2 positions, the 512 inputs of the first
/// linear layer.
pub const SOUNDNET5_POOLS: [usize; 5] = [4, 4, 4, 2, 2];

/// SoundNet5 over raw audio of `input_len` samples, as `(1, 1, input_len)`.
pub fn soundnet5_1d(input_len: usize) -> Result<ModelSpec> {
    // [in, out, kernel, stride, padding]
    const CONVS: [[usize; 5]; 5] = [
        [1, 16, 64, 2, 32],
        [16, 32, 32, 2, 16],
        [32, 64, 16, 2, 8],
        [64, 128, 8, 2, 4],
        [128, 256, 4, 2, 2],
    ];
    let mut layers = Vec::new();
    let mut len = input_len;
    for (c, &pool) in CONVS.iter().zip(&SOUNDNET5_POOLS) {
        layers.push(LayerSpec::conv(c[0], c[1], [1, c[2]], [1, c[3]], [0, c[4]]));
        layers.push(LayerSpec::Relu);
        len = output_size(len, c[2], c[3], c[4])?;
        let p = pool.min(len);
        layers.push(LayerSpec::MaxPool {
            kernel: [1, p],
            stride: [1, p],
        });
        len /= p;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Linear {
        in_features: 256 * len,
        out_features: 256,
    });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Linear {
        in_features: 256,
        out_features: 12,
    });
    let spec = ModelSpec {
        name: "soundnet5-1d".into(),
        input_shape: vec![1, 1, input_len],
        classes: 12,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Built-in architectures by name: `small-cnn-2d` (8×8 grayscale, 4 classes)
/// and `soundnet5-1d` (16 000 samples, 12 classes). Custom graphs are loaded
/// from JSON with [`ModelSpec::from_json`].
pub fn build_model(name: &str) -> Result<ModelSpec> {
    match name {
        "small-cnn-2d" => small_cnn_2d(&SmallCnnOptions::default()),
        "soundnet5-1d" => soundnet5_1d(16_000),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

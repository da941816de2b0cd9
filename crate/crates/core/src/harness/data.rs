//! Datasets: seeded synthetic images and 1-D signals, and IDX files.

use std::io::Read;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::seeds::stream;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Labeled examples stored as one `(N, C, H, W)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseTensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: DenseTensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.order() != 4 || inputs.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} labels for inputs {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label: bad, classes });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &DenseTensor {
        &self.inputs
    }

    /// `(C, H, W)`.
    pub fn example_shape(&self) -> Vec<usize> {
        self.inputs.shape()[1..].to_vec()
    }

    fn stride(&self) -> usize {
        self.inputs.shape()[1..].iter().product()
    }

    /// Example `i` shaped `(C, H, W)`.
    pub fn example(&self, i: usize) -> (DenseTensor, usize) {
        let s = self.stride();
        let x = DenseTensor::new(self.example_shape(), self.inputs.data()[i * s..(i + 1) * s].to_vec())
            .expect("stored shape");
        (x, self.labels[i])
    }

    /// Stacks the given examples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (DenseTensor, Vec<usize>) {
        let s = self.stride();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * s..(i + 1) * s]);
        }
        let mut shape = vec![indices.len()];
        shape.extend(self.example_shape());
        let x = DenseTensor::new(shape, data).expect("stored shape");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (inputs, labels) = self.batch(indices);
        Dataset {
            inputs,
            labels,
            classes: self.classes,
        }
    }

    /// The first `n` examples (all if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Grayscale `size × size` images: one Gaussian blob per class placed on
    /// a ring, over a striped background with pixel noise.
    SyntheticImages {
        classes: usize,
        size: usize,
        count: usize,
        seed: u64,
    },
    /// IDX image (`0x00000803`) and label (`0x00000801`) files.
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        classes: usize,
    },
    /// Noisy tones of class-dependent frequency, shaped `(1, 1, length)`.
    Synthetic1D {
        classes: usize,
        length: usize,
        count: usize,
        seed: u64,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::SyntheticImages {
            classes: 4,
            size: 8,
            count: 1000,
            seed: 0,
        }
    }
}

/// Train/validation/test fractions.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Loads `source` and splits it in stored order: the first `⌊0.8 N⌋`
/// examples train, the next `⌊0.1 N⌋` validate, the rest test.
pub fn load_dataset(source: &DatasetSource) -> Result<Splits> {
    let full = match source {
        DatasetSource::SyntheticImages {
            classes,
            size,
            count,
            seed,
        } => synthetic_images(*classes, *size, *count, *seed)?,
        DatasetSource::IdxFiles {
            images,
            labels,
            classes,
        } => read_idx_dataset(images, labels, *classes)?,
        DatasetSource::Synthetic1D {
            classes,
            length,
            count,
            seed,
        } => synthetic_1d(*classes, *length, *count, *seed)?,
    };
    split(&full, DEFAULT_SPLIT)
}

pub fn split(data: &Dataset, fractions: (f64, f64, f64)) -> Result<Splits> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n = data.len();
    let n_train = (n as f64 * a + 1e-9).floor() as usize;
    let n_val = (n as f64 * b + 1e-9).floor() as usize;
    let idx: Vec<usize> = (0..n).collect();
    Ok(Splits {
        train: data.subset(&idx[..n_train]),
        val: data.subset(&idx[n_train..n_train + n_val]),
        test: data.subset(&idx[n_train + n_val..]),
    })
}

pub fn synthetic_images(classes: usize, size: usize, count: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || size < 4 || count == 0 {
        return Err(Error::Config(format!(
            "synthetic images need ≥ 2 classes, size ≥ 4 and a positive count (got {classes}, {size}, {count})"
        )));
    }
    let mut rng = stream(seed, "synthetic-images", &[]);
    let noise = Normal::new(0.0, 0.08).expect("valid sd");
    let centre = (size as f64 - 1.0) / 2.0;
    let radius = size as f64 / 4.0;
    let mut data = Vec::with_capacity(count * size * size);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let angle = std::f64::consts::TAU * label as f64 / classes as f64 + std::f64::consts::FRAC_PI_4;
        let cy = centre + radius * angle.sin() + rng.random_range(-0.6..0.6);
        let cx = centre + radius * angle.cos() + rng.random_range(-0.6..0.6);
        let sigma = rng.random_range(0.9..1.4);
        let amp = rng.random_range(0.12..0.22);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let stripe_freq = rng.random_range(0.6..1.6);
        let stripe_amp = rng.random_range(0.0..0.08);
        let vertical = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (yf, xf) = (y as f64, x as f64);
                let d2 = (yf - cy).powi(2) + (xf - cx).powi(2);
                let blob = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                let t = if vertical { xf } else { yf };
                let stripes = stripe_amp * (stripe_freq * t + phase).sin();
                let v = 0.3 + blob + stripes + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    // interleaved labels keep every split class-balanced; shuffle examples
    // within consecutive blocks of `classes` so order carries no signal
    let inputs = DenseTensor::new(vec![count, 1, size, size], data)?;
    let mut order: Vec<usize> = (0..count).collect();
    for block in order.chunks_mut(classes) {
        for k in (1..block.len()).rev() {
            let j = rng.random_range(0..=k);
            block.swap(k, j);
        }
    }
    Dataset::new(inputs, labels, classes).map(|d| d.subset(&order))
}

pub fn synthetic_1d(classes: usize, length: usize, count: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || length < 8 || count == 0 {
        return Err(Error::Config(format!(
            "1-D signals need ≥ 2 classes, length ≥ 8 and a positive count (got {classes}, {length}, {count})"
        )));
    }
    let mut rng = stream(seed, "synthetic-1d", &[]);
    let noise = Normal::new(0.0, 0.1).expect("valid sd");
    let mut data = Vec::with_capacity(count * length);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let cycles = 2.0 * (label + 1) as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.3..0.6);
        for t in 0..length {
            let s = amp * (std::f64::consts::TAU * cycles * t as f64 / length as f64 + phase).sin();
            data.push(s + noise.sample(&mut rng));
        }
        labels.push(label);
    }
    Dataset::new(DenseTensor::new(vec![count, 1, 1, length], data)?, labels, classes)
}

const IDX_UBYTE: u8 = 0x08;

fn read_idx(path: &Path, expected_dims: u8) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_idx(&bytes, expected_dims).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parses an unsigned-byte IDX buffer with `expected_dims` dimensions.
pub fn parse_idx(bytes: &[u8], expected_dims: u8) -> std::result::Result<(Vec<usize>, Vec<u8>), String> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err("missing IDX magic".into());
    }
    if bytes[2] != IDX_UBYTE {
        return Err(format!("unsupported IDX element type 0x{:02x}", bytes[2]));
    }
    if bytes[3] != expected_dims {
        return Err(format!(
            "expected {expected_dims} dimensions, header declares {}",
            bytes[3]
        ));
    }
    let header = 4 + 4 * expected_dims as usize;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(format!(
            "payload has {} bytes, dims {dims:?} need {len}",
            bytes.len() - header
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Serializes unsigned bytes as an IDX buffer.
pub fn encode_idx(dims: &[usize], values: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(values);
    out
}

/// Images scaled to `[0, 1]`, shaped `(N, 1, rows, cols)`.
pub fn read_idx_dataset(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let (idims, pixels) = read_idx(images, 3)?;
    let (ldims, lbytes) = read_idx(labels, 1)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data(format!("{} images but {} labels", idims[0], ldims[0])));
    }
    let inputs = DenseTensor::new(
        vec![idims[0], 1, idims[1], idims[2]],
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .map_err(|e| Error::Data(e.to_string()))?;
    let labels: Vec<usize> = lbytes.iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Dataset::new(inputs, labels, classes)
}

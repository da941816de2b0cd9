//! Flat `key = value` experiment configuration and the training pipeline it
//! drives.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{load_dataset, DatasetSource, Splits};
use super::eval::SweepConfig;
use super::seeds::derive_seed;
use super::train::{train, AdversarialTraining, EpochMetrics, TrainConfig};
use crate::attacks::AttackKind;
use crate::binary::SteVariant;
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, ranks_from_fraction, small_cnn_2d, soundnet5_1d, KernelKind, Model, ModelSpec, OptimizerConfig,
    SmallCnnOptions,
};

/// Kernel parametrization requested for the convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Plain,
    Tucker,
    Binary,
    BinaryTucker,
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Plain => "plain",
            Self::Tucker => "tucker",
            Self::Binary => "binary",
            Self::BinaryTucker => "binary-tucker",
        })
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "tucker" => Ok(Self::Tucker),
            "binary" => Ok(Self::Binary),
            "binary-tucker" => Ok(Self::BinaryTucker),
            other => Err(Error::Config(format!("unknown kernel kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Built-in architecture name, or `custom` together with `model_spec`.
    pub model: String,
    pub model_spec: Option<PathBuf>,
    pub widths: [usize; 3],
    pub hidden: usize,
    pub kernel: KernelChoice,
    pub rank_fraction: f64,
    pub theta: f64,
    pub rescale: bool,
    pub ste: SteVariant,
    /// Binary models keep their first convolution real-valued.
    pub keep_first_real: bool,
    /// Tucker models also factorize their first convolution.
    pub factorize_first: bool,
    pub optimizer: OptimizerConfig,
    /// Epochs of the real-valued, deterministic stage.
    pub epochs: usize,
    /// Epochs after converting to `kernel` with keep probability `theta`.
    pub finetune_epochs: usize,
    /// Learning rate of the second stage; the base rate when unset.
    pub finetune_lr: Option<f64>,
    pub batch_size: usize,
    pub flip: bool,
    /// Skip the first stage and start from this checkpoint.
    pub init_checkpoint: Option<PathBuf>,
    pub dataset: DatasetSource,
    pub attacks: Vec<AttackKind>,
    pub epsilons: Vec<f64>,
    /// Schedule units per input unit (255 for `[0, 1]` images, 1 for raw).
    pub epsilon_units: f64,
    pub n_runs: usize,
    pub eot_samples: usize,
    pub bpda_iterations: Option<usize>,
    pub max_examples: usize,
    /// PGD training radii; empty disables adversarial training.
    pub adv_epsilons: Vec<f64>,
    pub omniscient_theta: f64,
    pub landscape_n: usize,
    pub landscape_index: usize,
    pub landscape_range: (f64, f64),
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "small-cnn-2d".into(),
            model_spec: None,
            widths: [16, 32, 32],
            hidden: 64,
            kernel: KernelChoice::Plain,
            rank_fraction: 1.0,
            theta: 1.0,
            rescale: false,
            ste: SteVariant::ClippedIdentity,
            keep_first_real: true,
            factorize_first: true,
            optimizer: OptimizerConfig {
                learning_rate: 0.05,
                drop_epochs: vec![],
                drop_factor: 0.1,
                momentum: 0.9,
                weight_decay: 1e-6,
            },
            epochs: 10,
            finetune_epochs: 5,
            finetune_lr: None,
            batch_size: 32,
            flip: false,
            init_checkpoint: None,
            dataset: DatasetSource::default(),
            attacks: vec![AttackKind::Fgsm, AttackKind::Pgd],
            epsilons: vec![2.0, 8.0, 16.0],
            epsilon_units: 255.0,
            n_runs: 10,
            eot_samples: crate::attacks::DEFAULT_EOT_SAMPLES,
            bpda_iterations: None,
            max_examples: 100,
            adv_epsilons: vec![],
            omniscient_theta: 0.9,
            landscape_n: super::landscape::DEFAULT_RESOLUTION,
            landscape_index: 0,
            landscape_range: super::landscape::DEFAULT_RANGE,
            seed: 0,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key, as in a config file line.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let ds = &mut self.dataset;
        match key {
            "model" => self.model = v.to_string(),
            "model_spec" => self.model_spec = Some(PathBuf::from(v)),
            "widths" => {
                let w: Vec<usize> = parse_list(key, v)?;
                self.widths = w
                    .try_into()
                    .map_err(|_| Error::Config("`widths` needs exactly three values".into()))?;
            }
            "hidden" => self.hidden = parse(key, v)?,
            "kernel" => self.kernel = v.parse()?,
            "rank_fraction" => self.rank_fraction = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "rescale" => self.rescale = parse(key, v)?,
            "ste" => self.ste = v.parse()?,
            "keep_first_real" => self.keep_first_real = parse(key, v)?,
            "factorize_first" => self.factorize_first = parse(key, v)?,
            "lr" => self.optimizer.learning_rate = parse(key, v)?,
            "lr_drop_epochs" => self.optimizer.drop_epochs = parse_list(key, v)?,
            "lr_drop_factor" => self.optimizer.drop_factor = parse(key, v)?,
            "momentum" => self.optimizer.momentum = parse(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, v)?,
            "finetune_lr" => self.finetune_lr = Some(parse(key, v)?),
            "batch_size" => self.batch_size = parse(key, v)?,
            "flip" => self.flip = parse(key, v)?,
            "init_checkpoint" => self.init_checkpoint = Some(PathBuf::from(v)),
            "dataset" => {
                *ds = match v {
                    "synthetic" => DatasetSource::default(),
                    "synthetic-1d" => DatasetSource::Synthetic1D {
                        classes: 4,
                        length: 256,
                        count: 400,
                        seed: 0,
                    },
                    "idx" => DatasetSource::IdxFiles {
                        images: PathBuf::new(),
                        labels: PathBuf::new(),
                        classes: 10,
                    },
                    other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
                }
            }
            "dataset_classes" => match ds {
                DatasetSource::SyntheticImages { classes, .. }
                | DatasetSource::Synthetic1D { classes, .. }
                | DatasetSource::IdxFiles { classes, .. } => *classes = parse(key, v)?,
            },
            "dataset_count" => match ds {
                DatasetSource::SyntheticImages { count, .. } | DatasetSource::Synthetic1D { count, .. } => {
                    *count = parse(key, v)?
                }
                _ => return Err(Error::Config("`dataset_count` applies to synthetic data".into())),
            },
            "dataset_seed" => match ds {
                DatasetSource::SyntheticImages { seed, .. } | DatasetSource::Synthetic1D { seed, .. } => {
                    *seed = parse(key, v)?
                }
                _ => return Err(Error::Config("`dataset_seed` applies to synthetic data".into())),
            },
            "image_size" => match ds {
                DatasetSource::SyntheticImages { size, .. } => *size = parse(key, v)?,
                _ => return Err(Error::Config("`image_size` applies to synthetic images".into())),
            },
            "signal_length" => match ds {
                DatasetSource::Synthetic1D { length, .. } => *length = parse(key, v)?,
                _ => return Err(Error::Config("`signal_length` applies to synthetic-1d".into())),
            },
            "idx_images" | "idx_labels" => match ds {
                DatasetSource::IdxFiles { images, labels, .. } => {
                    if key == "idx_images" {
                        *images = PathBuf::from(v)
                    } else {
                        *labels = PathBuf::from(v)
                    }
                }
                _ => return Err(Error::Config(format!("`{key}` needs `dataset = idx` first"))),
            },
            "attacks" => {
                self.attacks = parse_list::<String>(key, v)?
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_>>()?
            }
            "epsilons" => self.epsilons = parse_list(key, v)?,
            "epsilon_units" => self.epsilon_units = parse(key, v)?,
            "n_runs" => self.n_runs = parse(key, v)?,
            "eot_samples" => self.eot_samples = parse(key, v)?,
            "bpda_iterations" => self.bpda_iterations = Some(parse(key, v)?),
            "max_examples" => self.max_examples = parse(key, v)?,
            "adv_epsilons" => self.adv_epsilons = parse_list(key, v)?,
            "omniscient_theta" => self.omniscient_theta = parse(key, v)?,
            "landscape_n" => self.landscape_n = parse(key, v)?,
            "landscape_index" => self.landscape_index = parse(key, v)?,
            "landscape_range" => {
                let r: Vec<f64> = parse_list(key, v)?;
                if r.len() != 2 {
                    return Err(Error::Config("`landscape_range` needs two values".into()));
                }
                self.landscape_range = (r[0], r[1]);
            }
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.omniscient_theta) {
            return Err(Error::InvalidProbability(if (0.0..=1.0).contains(&self.theta) {
                self.omniscient_theta
            } else {
                self.theta
            }));
        }
        if self.theta < 1.0 && matches!(self.kernel, KernelChoice::Plain | KernelChoice::Binary) {
            return Err(Error::Config(format!(
                "theta = {} needs a factorized kernel (tucker or binary-tucker)",
                self.theta
            )));
        }
        if !(self.rank_fraction > 0.0 && self.rank_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "rank_fraction {} must be in (0, 1]",
                self.rank_fraction
            )));
        }
        let lr_ok = self.optimizer.learning_rate > 0.0 && self.finetune_lr.is_none_or(|lr| lr > 0.0);
        if !lr_ok || self.batch_size == 0 || self.epsilon_units <= 0.0 {
            return Err(Error::Config(
                "learning rate, batch size and epsilon_units must be positive".into(),
            ));
        }
        if self.epsilons.iter().chain(&self.adv_epsilons).any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("radii must be non-negative".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering of the scalar settings.
    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("model", self.model.clone());
        m.insert("widths", join(&self.widths));
        m.insert("hidden", self.hidden.to_string());
        m.insert("kernel", self.kernel.to_string());
        m.insert("rank_fraction", self.rank_fraction.to_string());
        m.insert("theta", self.theta.to_string());
        m.insert("rescale", self.rescale.to_string());
        m.insert("ste", self.ste.to_string());
        m.insert("keep_first_real", self.keep_first_real.to_string());
        m.insert("factorize_first", self.factorize_first.to_string());
        m.insert("lr", self.optimizer.learning_rate.to_string());
        m.insert("lr_drop_epochs", join(&self.optimizer.drop_epochs));
        m.insert("lr_drop_factor", self.optimizer.drop_factor.to_string());
        m.insert("momentum", self.optimizer.momentum.to_string());
        m.insert("weight_decay", self.optimizer.weight_decay.to_string());
        m.insert("epochs", self.epochs.to_string());
        m.insert("finetune_epochs", self.finetune_epochs.to_string());
        if let Some(lr) = self.finetune_lr {
            m.insert("finetune_lr", lr.to_string());
        }
        m.insert("batch_size", self.batch_size.to_string());
        m.insert("flip", self.flip.to_string());
        m.insert("attacks", join(&self.attacks));
        m.insert("epsilons", join(&self.epsilons));
        m.insert("epsilon_units", self.epsilon_units.to_string());
        m.insert("n_runs", self.n_runs.to_string());
        m.insert("eot_samples", self.eot_samples.to_string());
        m.insert("max_examples", self.max_examples.to_string());
        m.insert("adv_epsilons", join(&self.adv_epsilons));
        m.insert("omniscient_theta", self.omniscient_theta.to_string());
        m.insert("landscape_n", self.landscape_n.to_string());
        m.insert("landscape_index", self.landscape_index.to_string());
        m.insert("seed", self.seed.to_string());
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn sweep(&self) -> SweepConfig {
        let bounds = match self.dataset {
            DatasetSource::Synthetic1D { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, 1.0),
        };
        SweepConfig {
            attacks: self.attacks.clone(),
            epsilons: self.epsilons.clone(),
            scale: 1.0 / self.epsilon_units,
            pixel_bounds: bounds,
            n_runs: self.n_runs,
            eot_samples: self.eot_samples,
            bpda_iterations: self.bpda_iterations,
            max_examples: self.max_examples,
            seed: derive_seed(self.seed, "sweep", &[]),
        }
    }

    pub fn load_data(&self) -> Result<Splits> {
        load_dataset(&self.dataset)
    }

    /// The real-valued architecture for inputs shaped like `splits`.
    pub fn base_spec(&self, splits: &Splits) -> Result<ModelSpec> {
        let shape = splits.train.example_shape();
        let classes = splits.train.classes();
        let spec = match (self.model.as_str(), &self.model_spec) {
            (_, Some(path)) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                ModelSpec::from_json(&text)?
            }
            ("small-cnn-2d", None) => small_cnn_2d(&SmallCnnOptions {
                input_channels: shape[0],
                input_size: [shape[1], shape[2]],
                widths: self.widths,
                hidden: self.hidden,
                classes,
            })?,
            ("soundnet5-1d", None) => soundnet5_1d(shape[2])?,
            (other, None) => return Err(Error::UnknownModel(other.to_string())),
        };
        if spec.input_shape != shape || spec.classes != classes {
            return Err(Error::InvalidModel(format!(
                "spec expects {:?} / {} classes, data has {shape:?} / {classes}",
                spec.input_shape, spec.classes
            )));
        }
        Ok(spec)
    }

    /// `base` with this configuration's kernel kind.
    pub fn target_spec(&self, base: &ModelSpec) -> ModelSpec {
        let frac = self.rank_fraction;
        match self.kernel {
            KernelChoice::Plain => base.clone(),
            KernelChoice::Tucker => base.with_kernel_kinds(|i, s| {
                if i == 0 && !self.factorize_first {
                    KernelKind::Plain
                } else {
                    KernelKind::Tucker {
                        ranks: ranks_from_fraction(s, frac),
                    }
                }
            }),
            KernelChoice::Binary => base.binarized(self.keep_first_real, |_, _| KernelKind::Binary),
            KernelChoice::BinaryTucker => base.binarized(self.keep_first_real, |_, s| KernelKind::BinaryTucker {
                ranks: ranks_from_fraction(s, frac),
            }),
        }
    }

    fn adversarial(&self) -> Option<AdversarialTraining> {
        (!self.adv_epsilons.is_empty()).then(|| AdversarialTraining {
            epsilons: self.adv_epsilons.clone(),
            scale: 1.0 / self.epsilon_units,
            pixel_bounds: self.sweep().pixel_bounds,
        })
    }

    fn finetune_config(&self) -> TrainConfig {
        let mut tc = self.train_config(self.finetune_epochs, "train-finetune");
        if let Some(lr) = self.finetune_lr {
            tc.optimizer.learning_rate = lr;
        }
        tc
    }

    fn train_config(&self, epochs: usize, stage: &str) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer.clone(),
            flip: self.flip,
            seed: derive_seed(self.seed, stage, &[]),
        }
    }
}

/// A trained model and the metrics of every stage, tagged by stage name.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: Model,
    pub history: Vec<(String, EpochMetrics)>,
    pub epochs_run: usize,
}

/// Two-stage pipeline: a real-valued deterministic network is trained (or
/// loaded from `init_checkpoint`), then converted to the configured kernel
/// kind and keep probability and fine-tuned. PGD training, when enabled,
/// applies to the last stage.
pub fn fit(
    cfg: &ExperimentConfig,
    splits: &Splits,
    mut on_epoch: impl FnMut(&str, &EpochMetrics),
) -> Result<FitOutput> {
    cfg.validate()?;
    let base_spec = cfg.base_spec(splits)?;
    let converts = cfg.kernel != KernelChoice::Plain || cfg.theta < 1.0;
    let adversarial = cfg.adversarial();
    let mut history = Vec::new();
    let mut epochs_run = 0;
    let mut base = match &cfg.init_checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => Model::new(base_spec.clone(), derive_seed(cfg.seed, "init", &[]))?,
    };
    if cfg.init_checkpoint.is_none() {
        let stage_adv = if converts { None } else { adversarial.as_ref() };
        let h = train(
            &mut base,
            splits,
            &cfg.train_config(cfg.epochs, "train-base"),
            stage_adv,
            |m| on_epoch("base", m),
        )?;
        epochs_run += h.len();
        history.extend(h.into_iter().map(|m| ("base".to_string(), m)));
    }
    if !converts {
        return Ok(FitOutput {
            model: base.with_ste(cfg.ste),
            history,
            epochs_run,
        });
    }
    let mut model = base
        .convert(cfg.target_spec(base.spec()))?
        .with_dropout(cfg.theta, cfg.rescale)?
        .with_ste(cfg.ste);
    let h = train(&mut model, splits, &cfg.finetune_config(), adversarial.as_ref(), |m| {
        on_epoch("finetune", m)
    })?;
    epochs_run += h.len();
    history.extend(h.into_iter().map(|m| ("finetune".to_string(), m)));
    Ok(FitOutput {
        model,
        history,
        epochs_run,
    })
}

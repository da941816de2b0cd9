//! Checkpoints: a JSON manifest line followed by one tensor record per
//! parameter.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::spec::ModelSpec;
use crate::binary::SteVariant;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor};

const FORMAT: &str = "latentguard-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub spec: ModelSpec,
    pub epoch: usize,
    pub theta: f64,
    pub rescale: bool,
    pub ste: SteVariant,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: Vec<String>,
}

pub fn write_checkpoint<W: Write>(
    out: &mut W,
    model: &Model,
    epoch: usize,
    seeds: &BTreeMap<String, u64>,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        spec: model.spec().clone(),
        epoch,
        theta: model.theta,
        rescale: model.rescale,
        ste: model.ste,
        seeds: seeds.clone(),
        parameters: model.params().iter().flatten().map(|p| p.name.clone()).collect(),
    };
    serde_json::to_writer(&mut *out, &manifest)?;
    out.write_all(b"\n")?;
    for p in model.params().iter().flatten() {
        write_tensor(out, &p.name, &p.value)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<(Model, CheckpointManifest)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format `{}`",
            manifest.format
        )));
    }
    let mut values = HashMap::new();
    while let Some((name, t)) = read_tensor(input)? {
        values.insert(name, t);
    }
    let mut model = Model::new(manifest.spec.clone(), 0)?
        .with_dropout(manifest.theta, manifest.rescale)?
        .with_ste(manifest.ste);
    model.load_values(values)?;
    Ok((model, manifest))
}

pub fn save_checkpoint(path: &Path, model: &Model, epoch: usize, seeds: &BTreeMap<String, u64>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, model, epoch, seeds)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointManifest)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_model, ranks_from_fraction, KernelKind};

    #[test]
    fn round_trip_is_exact() {
        let spec = build_model("small-cnn-2d").unwrap().with_kernel_kinds(|i, s| match i {
            0 => KernelKind::Plain,
            1 => KernelKind::Binary,
            _ => KernelKind::Tucker {
                ranks: ranks_from_fraction(s, 0.5),
            },
        });
        let model = Model::new(spec, 4)
            .unwrap()
            .with_dropout(0.8, true)
            .unwrap()
            .with_ste(SteVariant::Tanh);
        let seeds = BTreeMap::from([("init".to_string(), 4u64)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        save_checkpoint(&path, &model, 7, &seeds).unwrap();
        let (back, manifest) = load_checkpoint(&path).unwrap();
        assert_eq!(back.flat_values(), model.flat_values());
        assert_eq!(back.spec(), model.spec());
        assert_eq!((back.theta, back.rescale, back.ste), (0.8, true, SteVariant::Tanh));
        assert_eq!(manifest.epoch, 7);
        assert_eq!(manifest.seeds, seeds);
    }

    #[test]
    fn truncated_or_incomplete_checkpoints_are_rejected() {
        let model = Model::new(build_model("small-cnn-2d").unwrap(), 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, 0, &BTreeMap::new()).unwrap();
        let mut cut = buf.clone();
        cut.truncate(buf.len() - 5);
        assert!(matches!(read_checkpoint(&mut cut.as_slice()), Err(Error::Format(_))));
        // manifest only: every parameter is missing
        let manifest_end = buf.iter().position(|&b| b == b'\n').unwrap();
        let res = read_checkpoint(&mut &buf[..=manifest_end]);
        assert!(matches!(res, Err(Error::Format(m)) if m.contains("missing")));
    }
}

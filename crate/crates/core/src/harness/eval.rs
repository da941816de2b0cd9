//! Robust-accuracy sweeps and their tabular reports.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::seeds::stream;
use super::train::deployed_mode;
use crate::attacks::{run_attack, AttackConfig, AttackKind, AttackRecord, AttackTarget, ModelTarget, PassKind};
use crate::error::{Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub attacks: Vec<AttackKind>,
    /// Radii in schedule units (0–255 for images).
    pub epsilons: Vec<f64>,
    /// Input units per schedule unit.
    pub scale: f64,
    pub pixel_bounds: (f64, f64),
    pub n_runs: usize,
    /// Passes summed per BPDA gradient.
    pub eot_samples: usize,
    /// Overrides the scheduled BPDA iteration count.
    pub bpda_iterations: Option<usize>,
    /// Test examples attacked per run (the first ones of the split).
    pub max_examples: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            attacks: vec![AttackKind::Fgsm, AttackKind::Pgd],
            epsilons: vec![2.0, 8.0, 16.0],
            scale: 1.0 / 255.0,
            pixel_bounds: (0.0, 1.0),
            n_runs: 10,
            eot_samples: crate::attacks::DEFAULT_EOT_SAMPLES,
            bpda_iterations: None,
            max_examples: 100,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn attack_config(&self, kind: AttackKind, eps: f64) -> Result<AttackConfig> {
        let mut cfg = AttackConfig::scaled(kind, eps, self.scale, self.pixel_bounds)?;
        if kind == AttackKind::Bpda {
            cfg.eot_samples = self.eot_samples;
            if let (Some(n), true) = (self.bpda_iterations, eps > 0.0) {
                cfg.iterations = n;
            }
        }
        Ok(cfg)
    }
}

/// One `(attack, ε)` cell: accuracy in percent per run and their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// Attack name, or `clean`.
    pub attack: String,
    pub epsilon: f64,
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub std: f64,
    pub runs: Vec<f64>,
}

impl RobustnessRow {
    pub fn from_runs(attack: impl Into<String>, epsilon: f64, runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = if runs.is_empty() {
            0.0
        } else {
            runs.iter().sum::<f64>() / n
        };
        let std = if runs.len() < 2 {
            0.0
        } else {
            (runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            attack: attack.into(),
            epsilon,
            mean,
            std,
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub n_runs: usize,
    pub rows: Vec<RobustnessRow>,
}

pub const CLEAN: &str = "clean";

#[derive(Serialize, Deserialize)]
struct CsvRow {
    attack: String,
    epsilon: f64,
    mean: f64,
    std: f64,
    n_runs: usize,
    runs: String,
}

impl RobustnessTable {
    pub fn clean(&self) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.attack == CLEAN)
    }

    pub fn get(&self, attack: AttackKind, epsilon: f64) -> Option<&RobustnessRow> {
        let name = attack.to_string();
        self.rows.iter().find(|r| r.attack == name && r.epsilon == epsilon)
    }

    /// CSV with header `attack,epsilon,mean,std,n_runs,runs`; per-run
    /// values are space-separated in the last column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                attack: r.attack.clone(),
                epsilon: r.epsilon,
                mean: r.mean,
                std: r.std,
                n_runs: r.runs.len(),
                runs: r.runs.iter().map(f64::to_string).collect::<Vec<_>>().join(" "),
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        let mut n_runs = None;
        for rec in rdr.deserialize::<CsvRow>() {
            let rec = rec.map_err(csv_err)?;
            let runs = rec
                .runs
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Format(format!("run value `{v}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if runs.len() != rec.n_runs {
                return Err(Error::Format(format!(
                    "row {}@{}: n_runs {} but {} values",
                    rec.attack,
                    rec.epsilon,
                    rec.n_runs,
                    runs.len()
                )));
            }
            if *n_runs.get_or_insert(rec.n_runs) != rec.n_runs {
                return Err(Error::Format("rows disagree on the run count".into()));
            }
            rows.push(RobustnessRow {
                attack: rec.attack,
                epsilon: rec.epsilon,
                mean: rec.mean,
                std: rec.std,
                runs,
            });
        }
        Ok(Self {
            n_runs: n_runs.unwrap_or(0),
            rows,
        })
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>9} {:>8}   (n_runs = {})",
            "attack", "epsilon", "acc %", "std", self.n_runs
        );
        for r in &self.rows {
            let _ = writeln!(out, "{:<8} {:>8} {:>9.2} {:>8.2}", r.attack, r.epsilon, r.mean, r.std);
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Who the attacker differentiates and who renders the verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threat {
    /// Gradients and verdicts both from the deployed model.
    WhiteBox,
    /// Gradients from the full deterministic weights; verdicts from the
    /// same weights randomized with `theta_defense`.
    Omniscient { theta_defense: f64 },
}

/// Output of [`evaluate`]: the table and one record per attacked example.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: RobustnessTable,
    pub records: Vec<AttackRecord>,
}

/// Accuracy under every `(attack, ε)` of `sweep`, plus clean accuracy, over
/// `n_runs` runs. Within a run each example keeps one defense stream, keyed
/// `("defense", run, example)`, for all verdicts; the attacker draws from
/// `("attacker", run, example, attack, ε index)`.
pub fn evaluate(model: &Model, test: &Dataset, sweep: &SweepConfig, threat: Threat) -> Result<Evaluation> {
    if sweep.n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    if test.example_shape() != model.spec().input_shape {
        return Err(Error::ShapeMismatch(format!(
            "dataset examples {:?} vs model input {:?}",
            test.example_shape(),
            model.spec().input_shape
        )));
    }
    let defense = match threat {
        Threat::WhiteBox => model.clone(),
        Threat::Omniscient { theta_defense } => {
            if model.spec().tucker_layer_count() == 0 {
                return Err(Error::InvalidModel(
                    "omniscient evaluation needs factorized layers".into(),
                ));
            }
            model.clone().with_dropout(theta_defense, model.rescale)?
        }
    };
    let verdict = ModelTarget::white_box(&defense);
    let attacker = match threat {
        Threat::WhiteBox => verdict,
        Threat::Omniscient { .. } => ModelTarget {
            model: &defense,
            gradient: PassKind::Deterministic,
            inference: PassKind::Deterministic,
        },
    };
    let cells: Vec<(AttackKind, f64, AttackConfig)> = sweep
        .attacks
        .iter()
        .flat_map(|&a| sweep.epsilons.iter().map(move |&e| (a, e)))
        .map(|(a, e)| Ok((a, e, sweep.attack_config(a, e)?)))
        .collect::<Result<_>>()?;
    let n = test.len().min(sweep.max_examples);
    let jobs: Vec<(usize, usize)> = (0..sweep.n_runs).flat_map(|r| (0..n).map(move |i| (r, i))).collect();
    // per job: clean verdict, then one (correct, record) per cell
    let outcomes: Vec<(bool, Vec<(bool, AttackRecord)>)> = jobs
        .par_iter()
        .map(|&(run, i)| {
            let (x, y) = test.example(i);
            let defense_rng = || stream(sweep.seed, "defense", &[run as u64, i as u64]);
            let clean = verdict.predict(&x, &mut defense_rng())? == y;
            let mut per_cell = Vec::with_capacity(cells.len());
            for (kind, eps, cfg) in &cells {
                let ei = sweep.epsilons.iter().position(|e| e == eps).unwrap_or(0);
                let ai = AttackKind::ALL.iter().position(|a| a == kind).unwrap_or(0);
                let mut rng = stream(sweep.seed, "attacker", &[run as u64, i as u64, ai as u64, ei as u64]);
                let res = run_attack(*kind, &attacker, &x, y, cfg, &mut rng)?;
                let correct = verdict.predict(&res.x_adv, &mut defense_rng())? == y;
                per_cell.push((
                    correct,
                    AttackRecord {
                        index: i,
                        epsilon: *eps,
                        attack: *kind,
                        success: !correct,
                        queries: res.gradient_queries + 1,
                        linf: res.linf(),
                    },
                ));
            }
            Ok((clean, per_cell))
        })
        .collect::<Result<_>>()?;
    let pct = |hits: usize| 100.0 * hits as f64 / n.max(1) as f64;
    let mut rows = Vec::with_capacity(cells.len() + 1);
    let clean_runs = (0..sweep.n_runs)
        .map(|r| pct(outcomes[r * n..(r + 1) * n].iter().filter(|o| o.0).count()))
        .collect();
    rows.push(RobustnessRow::from_runs(CLEAN, 0.0, clean_runs));
    for (c, (kind, eps, _)) in cells.iter().enumerate() {
        let runs = (0..sweep.n_runs)
            .map(|r| pct(outcomes[r * n..(r + 1) * n].iter().filter(|o| o.1[c].0).count()))
            .collect();
        rows.push(RobustnessRow::from_runs(kind.to_string(), *eps, runs));
    }
    let records = outcomes
        .into_iter()
        .flat_map(|(_, cells)| cells.into_iter().map(|c| c.1))
        .collect();
    Ok(Evaluation {
        table: RobustnessTable {
            n_runs: sweep.n_runs,
            rows,
        },
        records,
    })
}

/// White-box robust accuracy of the deployed model.
pub fn robustness_sweep(model: &Model, test: &Dataset, sweep: &SweepConfig) -> Result<RobustnessTable> {
    Ok(evaluate(model, test, sweep, Threat::WhiteBox)?.table)
}

/// Attacks crafted on the un-randomized weights, judged by the model
/// randomized with `theta_defense`.
pub fn omniscient_eval(
    model: &Model,
    test: &Dataset,
    sweep: &SweepConfig,
    theta_defense: f64,
) -> Result<RobustnessTable> {
    Ok(evaluate(model, test, sweep, Threat::Omniscient { theta_defense })?.table)
}

/// Whether the model's verdicts are randomized.
pub fn is_randomized(model: &Model) -> bool {
    deployed_mode(model) == PassKind::Randomized
}

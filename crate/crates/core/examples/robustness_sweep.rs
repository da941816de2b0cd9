//! Robust accuracy table (mean ± sample std over runs) for a briefly trained
//! deterministic CNN, written as CSV to stdout.

use latentguard::attacks::AttackKind;
use latentguard::harness::{fit, robustness_sweep, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let cfg = ExperimentConfig::parse("epochs = 5\ndataset_count = 600\n")?;
    let splits = cfg.load_data()?;
    let model = fit(&cfg, &splits, |_, _| {})?.model;
    let mut sweep = cfg.sweep();
    sweep.attacks = vec![AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd];
    sweep.epsilons = vec![0.0, 2.0, 8.0, 16.0];
    sweep.n_runs = 3;
    let table = robustness_sweep(&model, &splits.test, &sweep)?;
    print!("{}", table.render());
    print!("{}", table.to_csv()?);
    Ok(())
}

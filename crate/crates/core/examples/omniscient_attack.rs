//! An attacker holding the full deterministic weights against the same
//! weights deployed with latent dropout at several keep probabilities.

use latentguard::attacks::AttackKind;
use latentguard::harness::{fit, omniscient_eval, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let cfg = ExperimentConfig::parse(
        "kernel = tucker\ntheta = 0.9\nrescale = true\nfactorize_first = false\nepochs = 5\nfinetune_epochs = 3\nfinetune_lr = 0.01\ndataset_count = 600\n",
    )?;
    let splits = cfg.load_data()?;
    let model = fit(&cfg, &splits, |_, _| {})?.model;
    let mut sweep = cfg.sweep();
    sweep.attacks = vec![AttackKind::Fgsm];
    sweep.epsilons = vec![8.0, 16.0];
    sweep.n_runs = 3;
    for theta in [1.0, 0.95, 0.9, 0.8] {
        let table = omniscient_eval(&model, &splits.test, &sweep, theta)?;
        let cell = |e| table.get(AttackKind::Fgsm, e).map_or(f64::NAN, |r| r.mean);
        println!(
            "defense θ={theta:.2}: clean {:5.1}%, FGSM ε=8 {:5.1}%, ε=16 {:5.1}%",
            table.clean().map_or(f64::NAN, |r| r.mean),
            cell(8.0),
            cell(16.0)
        );
    }
    Ok(())
}

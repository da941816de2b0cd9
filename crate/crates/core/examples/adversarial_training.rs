//! PGD adversarial training with radii drawn per batch, compared with
//! standard training under FGSM.

use latentguard::attacks::AttackKind;
use latentguard::harness::{fit, robustness_sweep, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let base = "epochs = 4\ndataset_count = 400\nn_runs = 1\nepsilons = 8\nattacks = fgsm\n";
    for adv in ["", "adv_epsilons = 0, 4, 8\n"] {
        let cfg = ExperimentConfig::parse(&format!("{base}{adv}"))?;
        let splits = cfg.load_data()?;
        let model = fit(&cfg, &splits, |_, _| {})?.model;
        let table = robustness_sweep(&model, &splits.test, &cfg.sweep())?;
        println!(
            "{:12} clean {:5.1}%, FGSM ε=8 {:5.1}%",
            if adv.is_empty() { "standard" } else { "adversarial" },
            table.clean().map_or(f64::NAN, |r| r.mean),
            table.get(AttackKind::Fgsm, 8.0).map_or(f64::NAN, |r| r.mean)
        );
    }
    Ok(())
}

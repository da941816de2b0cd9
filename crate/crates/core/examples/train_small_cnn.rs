//! Trains the small 2-D CNN on synthetic blobs, then converts it to Tucker
//! kernels with keep probability 0.8 and fine-tunes.

use latentguard::harness::{fit, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let cfg = ExperimentConfig::parse(
        "kernel = tucker\ntheta = 0.8\nrescale = true\nfactorize_first = false\nepochs = 6\nfinetune_epochs = 4\nfinetune_lr = 0.01\ndataset_count = 600\n",
    )?;
    let splits = cfg.load_data()?;
    let out = fit(&cfg, &splits, |stage, m| {
        println!(
            "{stage:8} epoch {:2}: loss {:.3}, train {:5.1}%, val {:5.1}%",
            m.epoch, m.loss, m.train_accuracy, m.val_accuracy
        )
    })?;
    println!("{} parameters, {} epochs", out.model.parameter_count(), out.epochs_run);
    Ok(())
}

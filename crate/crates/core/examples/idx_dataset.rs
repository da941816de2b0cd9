//! Writes a small dataset in IDX format, reads it back through the loader
//! and trains on it.

use latentguard::harness::data::{encode_idx, synthetic_images};
use latentguard::harness::{fit, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let dir = std::env::temp_dir().join("latentguard-idx-example");
    std::fs::create_dir_all(&dir)?;
    let data = synthetic_images(4, 8, 400, 7)?;
    let pixels: Vec<u8> = data.inputs().data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let labels: Vec<u8> = data.labels().iter().map(|&l| l as u8).collect();
    std::fs::write(dir.join("images.idx"), encode_idx(&[400, 8, 8], &pixels))?;
    std::fs::write(dir.join("labels.idx"), encode_idx(&[400], &labels))?;
    let cfg = ExperimentConfig::parse(&format!(
        "dataset = idx\nidx_images = {}\nidx_labels = {}\ndataset_classes = 4\nepochs = 4\n",
        dir.join("images.idx").display(),
        dir.join("labels.idx").display()
    ))?;
    let splits = cfg.load_data()?;
    println!(
        "train {} / val {} / test {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let out = fit(&cfg, &splits, |_, _| {})?;
    let last = &out.history.last().expect("epochs ran").1;
    println!(
        "val accuracy after {} epochs: {:.1}%",
        out.epochs_run, last.val_accuracy
    );
    Ok(())
}

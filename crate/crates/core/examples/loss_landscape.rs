//! Loss surface around the first test example along the input gradient and
//! a random orthogonal direction; prints a coarse ASCII view.

use latentguard::attacks::PassKind;
use latentguard::harness::{fit, loss_landscape, ExperimentConfig};

fn main() -> latentguard::Result<()> {
    let cfg = ExperimentConfig::parse("epochs = 4\ndataset_count = 400\n")?;
    let splits = cfg.load_data()?;
    let model = fit(&cfg, &splits, |_, _| {})?.model;
    let (x, y) = splits.test.example(0);
    let grid = loss_landscape(&model, &x, y, 11, (-0.5, 0.5), PassKind::Deterministic, 9)?;
    let max = grid.losses.iter().cloned().fold(f64::MIN, f64::max);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for i in 0..grid.n {
        let row: String = (0..grid.n)
            .map(|j| shades[((grid.losses[i * grid.n + j] / max) * 9.0).round() as usize])
            .collect();
        println!("u={:+.2} |{row}|", grid.coord(i));
    }
    println!(
        "centre loss {:.4}, max {max:.4}",
        grid.losses[(grid.n / 2) * grid.n + grid.n / 2]
    );
    Ok(())
}

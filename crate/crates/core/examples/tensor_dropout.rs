//! Latent tensor dropout on one factorized layer: sample keep vectors, form
//! the randomized kernel and compare it with the literal sketched evaluation.

use latentguard::factorized::{
    init_from_dense, randomized_weight, randomized_weight_reference, sample_masks_seeded, DropoutMasks,
};
use latentguard::tensor::{tucker_reconstruct, DenseTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> latentguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dense = DenseTensor::from_fn(&[8, 4, 3, 3], |_| rng.random_range(-1.0..1.0));
    let layer = init_from_dense(&dense, &[6, 4, 3, 3], 0.8)?;
    println!("survivor scale {:.4}", layer.survivor_scale());
    let full = tucker_reconstruct(layer.factors())?;
    for seed in 0..4 {
        let masks = sample_masks_seeded(layer.ranks(), layer.theta(), seed)?;
        let fast = randomized_weight(&layer, &masks)?;
        let slow = randomized_weight_reference(&layer, &masks)?;
        let kept: Vec<usize> = masks
            .lambdas()
            .iter()
            .map(|l| l.iter().filter(|&&v| v == 1.0).count())
            .collect();
        println!(
            "seed {seed}: kept {kept:?}, ‖W̃ − W‖/‖W‖ = {:.3}, masked vs sketched {:.1e}",
            fast.sub(&full)?.frobenius_norm() / full.frobenius_norm(),
            fast.max_abs_diff(&slow)?
        );
    }
    let none = randomized_weight(&layer, &DropoutMasks::ones(layer.ranks()))?;
    println!(
        "all-ones mask reproduces the scaled kernel: {:.1e}",
        none.max_abs_diff(&full.scale(layer.survivor_scale()))?
    );
    Ok(())
}

//! FGSM, BIM and PGD against a logistic-regression target with closed-form
//! gradients, across the standard radii.

use latentguard::attacks::{run_attack, AttackConfig, AttackKind, AttackTarget, LinearSoftmax};
use latentguard::tensor::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> latentguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weight = DenseTensor::from_fn(&[3, 16], |_| rng.random_range(-1.0..1.0));
    let target = LinearSoftmax::new(weight, vec![0.0; 3], vec![1, 4, 4])?;
    let examples: Vec<(DenseTensor, usize)> = (0..200)
        .map(|_| {
            let x = DenseTensor::from_fn(&[1, 4, 4], |_| rng.random_range(0.0..1.0));
            let y = target.predict(&x, &mut rng).expect("prediction");
            (x, y)
        })
        .collect();
    for kind in [AttackKind::Fgsm, AttackKind::Bim, AttackKind::Pgd] {
        for eps in [2.0, 8.0, 16.0] {
            let cfg = AttackConfig::for_image(kind, eps)?;
            let mut fooled = 0;
            for (x, y) in &examples {
                fooled += run_attack(kind, &target, x, *y, &cfg, &mut rng)?.success as usize;
            }
            println!(
                "{kind:5} ε={eps:>2}/255, {:2} iterations: {fooled:3}/200 flipped",
                cfg.iterations
            );
        }
    }
    Ok(())
}

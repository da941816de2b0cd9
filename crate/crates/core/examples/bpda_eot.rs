//! Naive PGD against BPDA with summed expectation-over-transformation
//! gradients on a randomized (θ = 0.7) untrained Tucker CNN.

use latentguard::attacks::{run_attack, AttackConfig, AttackKind, ModelTarget};
use latentguard::harness::{load_dataset, DatasetSource};
use latentguard::nn::{ranks_from_fraction, small_cnn_2d, KernelKind, Model, SmallCnnOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> latentguard::Result<()> {
    let spec = small_cnn_2d(&SmallCnnOptions::default())?.with_kernel_kinds(|_, s| KernelKind::Tucker {
        ranks: ranks_from_fraction(s, 1.0),
    });
    let model = Model::new(spec, 4)?.with_dropout(0.7, true)?;
    let target = ModelTarget::white_box(&model);
    let test = load_dataset(&DatasetSource::default())?.test.take(40);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [AttackKind::Pgd, AttackKind::Bpda] {
        let cfg = AttackConfig::for_image(kind, 8.0)?;
        let (mut success, mut queries) = (0, 0);
        for i in 0..test.len() {
            let (x, y) = test.example(i);
            let res = run_attack(kind, &target, &x, y, &cfg, &mut rng)?;
            success += res.success as usize;
            queries += res.gradient_queries;
        }
        println!(
            "{kind}: {success}/{} misclassified, {queries} gradient passes",
            test.len()
        );
    }
    Ok(())
}

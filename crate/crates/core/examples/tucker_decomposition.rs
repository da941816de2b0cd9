//! Decomposes a random conv kernel at several ranks and prints how the
//! reconstruction error falls as HOOI refines the HOSVD start.

use latentguard::tensor::{
    relative_error, tucker_decompose_traced, tucker_reconstruct, DecompositionOptions, DenseTensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> latentguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let kernel = DenseTensor::from_fn(&[16, 8, 3, 3], |_| rng.random_range(-1.0..1.0));
    for ranks in [vec![16, 8, 3, 3], vec![8, 4, 3, 3], vec![4, 2, 2, 2]] {
        let (factors, trace) = tucker_decompose_traced(&kernel, &DecompositionOptions::new(ranks.clone()))?;
        let rec = tucker_reconstruct(&factors)?;
        println!(
            "ranks {ranks:?}: error {:.3e} after {} sweeps (HOSVD start {:.3e}), core holds {} of {} entries",
            relative_error(&kernel, &rec)?,
            trace.errors.len() - 1,
            trace.errors[0],
            factors.core().len(),
            kernel.len()
        );
    }
    Ok(())
}

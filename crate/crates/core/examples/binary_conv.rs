//! XNOR-style binary convolution: per-filter α, the input scale map K and the
//! binarized output next to the real-valued one.

use latentguard::binary::{binary_conv_forward, BinaryConvState};
use latentguard::conv::conv2d;
use latentguard::factorized::ConvGeometry;
use latentguard::tensor::DenseTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> latentguard::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = DenseTensor::from_fn(&[4, 3, 3, 3], |_| rng.random_range(-0.5..0.5));
    let x = DenseTensor::from_fn(&[3, 6, 6], |_| rng.random_range(-1.0..1.0));
    let g = ConvGeometry {
        stride: (1, 1),
        padding: (1, 1),
    };
    let state = BinaryConvState::prepare(&w, &x, g)?;
    println!(
        "α per filter: {:?}",
        state.alpha.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>()
    );
    println!(
        "K map shape {:?}, mean {:.3}",
        state.k_map.shape(),
        state.k_map.sum() / state.k_map.len() as f64
    );
    let binary = binary_conv_forward(&state, &x, g)?;
    let real = conv2d(&x.reshape(&[1, 3, 6, 6])?, &w, g)?.reshape(binary.shape())?;
    let cos = binary.dot(&real)? / (binary.frobenius_norm() * real.frobenius_norm());
    println!(
        "binary output {:?}, cosine similarity with the real conv {cos:.3}",
        binary.shape()
    );
    Ok(())
}

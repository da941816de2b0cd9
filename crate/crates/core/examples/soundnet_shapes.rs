//! Layer-by-layer activation shapes of the 1-D SoundNet-5 descriptor on a
//! one-second 8 kHz waveform.

use latentguard::nn::soundnet5_1d;

fn main() -> latentguard::Result<()> {
    let spec = soundnet5_1d(8000)?;
    let shapes = spec.validate()?;
    println!("input {:?}", spec.input_shape);
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        let name = serde_json::to_value(layer)?["layer"]
            .as_str()
            .unwrap_or("?")
            .to_string();
        println!("{name:>8} -> {shape:?}");
    }
    Ok(())
}

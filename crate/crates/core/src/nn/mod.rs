pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod spec;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointManifest};
pub use model::{argmax_rows, ForwardMode, ForwardOptions, ForwardPass, Model, ModelGradients, Parameter};
pub use optim::{sgd_step, OptimizerConfig};
pub use spec::{
    build_model, ranks_from_fraction, small_cnn_2d, soundnet5_1d, KernelKind, LayerSpec, ModelSpec, SmallCnnOptions,
};
pub use tape::{Gradients, SignForward, Tape, Var};

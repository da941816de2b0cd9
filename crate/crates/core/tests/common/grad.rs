//! Reverse-mode gradients against central finite differences, shared by the
//! `gradcheck` and `acceptance` targets.

use latentguard::binary::SteVariant;
use latentguard::factorized::ConvGeometry;
use latentguard::nn::{ForwardMode, ForwardOptions, KernelKind, LayerSpec, Model, ModelSpec, SignForward, Tape, Var};
use latentguard::tensor::DenseTensor;
use latentguard::Result;
use rand::Rng;

use super::{numeric_gradient, random_tensor, random_tensor_avoiding, relative_error, rng};

pub const POINTS: usize = 50;
const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Scalar `Σ out ⊙ weights` of the graph built on fresh leaves holding `inputs`.
fn contract(build: &Build, sign: SignForward, inputs: &[DenseTensor], weights: &DenseTensor) -> f64 {
    let mut tape = Tape::new().with_sign_forward(sign);
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &leaves).unwrap();
    tape.value(out).dot(weights).unwrap()
}

/// Worst relative error over the inputs of one random point.
fn point_error(build: &Build, sign: SignForward, inputs: &[DenseTensor], rng: &mut impl Rng) -> f64 {
    let mut tape = Tape::new().with_sign_forward(sign);
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &leaves).unwrap();
    let weights = random_tensor(tape.value(out).shape(), 1.0, rng);
    let loss = tape.weighted_sum(out, weights.clone()).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (j, input) in inputs.iter().enumerate() {
        let analytic = grads.get(leaves[j]).expect("leaf gradient").data().to_vec();
        let numeric = numeric_gradient(
            |flat| {
                let mut probe = inputs.to_vec();
                probe[j].data_mut().copy_from_slice(flat);
                contract(build, sign, &probe, &weights)
            },
            input.data(),
            STEP,
        );
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn check_primitive(
    name: &str,
    sign: SignForward,
    sample: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<DenseTensor>,
    build: &Build,
) -> f64 {
    let mut r = rng(name.bytes().map(u64::from).sum());
    (0..POINTS)
        .map(|_| {
            let inputs = sample(&mut r);
            point_error(build, sign, &inputs, &mut r)
        })
        .fold(0.0, f64::max)
}

fn hard(name: &str, sample: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<DenseTensor>, build: &Build) -> f64 {
    check_primitive(name, SignForward::Hard, sample, build)
}

pub fn add() -> f64 {
    hard(
        "add",
        |r| vec![random_tensor(&[2, 3, 4], 1.0, r), random_tensor(&[2, 3, 4], 1.0, r)],
        &|t, v| t.add(v[0], v[1]),
    )
}

pub fn add_bias() -> f64 {
    hard(
        "add_bias",
        |r| vec![random_tensor(&[2, 3, 2, 2], 1.0, r), random_tensor(&[3], 1.0, r)],
        &|t, v| t.add_bias(v[0], v[1]),
    )
}

pub fn mul_const() -> f64 {
    hard("mul_const", |r| vec![random_tensor(&[3, 2, 2], 1.0, r)], &|t, v| {
        let factor = DenseTensor::from_fn(&[3, 2, 2], |i| 0.5 + (i[0] + 2 * i[1] + 3 * i[2]) as f64);
        t.mul_const(v[0], factor)
    })
}

pub fn mode_product_every_mode() -> f64 {
    let shape = [2, 3, 2, 3];
    (0..4)
        .map(|mode| {
            hard(
                &format!("mode_product_{mode}"),
                move |r| vec![random_tensor(&shape, 1.0, r), random_tensor(&[4, shape[mode]], 1.0, r)],
                &move |t, v| t.mode_product(v[0], v[1], mode),
            )
        })
        .fold(0.0, f64::max)
}

pub fn conv2d_strided_padded() -> f64 {
    let geometry = ConvGeometry {
        stride: (2, 1),
        padding: (1, 2),
    };
    hard(
        "conv2d",
        |r| {
            vec![
                random_tensor(&[2, 2, 5, 4], 1.0, r),
                random_tensor(&[3, 2, 3, 2], 1.0, r),
            ]
        },
        &move |t, v| t.conv2d(v[0], v[1], geometry),
    )
}

pub fn relu() -> f64 {
    hard(
        "relu",
        |r| vec![random_tensor_avoiding(&[3, 4], 1.0, &[0.0], 1e-3, r)],
        &|t, v| Ok(t.relu(v[0])),
    )
}

pub fn max_pool() -> f64 {
    hard("max_pool", |r| vec![random_tensor(&[2, 2, 6, 5], 1.0, r)], &|t, v| {
        t.max_pool(v[0], (2, 2), (2, 1))
    })
}

pub fn reshape() -> f64 {
    hard("reshape", |r| vec![random_tensor(&[2, 3, 2, 2], 1.0, r)], &|t, v| {
        t.reshape(v[0], &[2, 12])
    })
}

pub fn linear() -> f64 {
    hard(
        "linear",
        |r| vec![random_tensor(&[3, 5], 1.0, r), random_tensor(&[4, 5], 1.0, r)],
        &|t, v| t.linear(v[0], v[1]),
    )
}

pub fn sign_surrogates() -> f64 {
    SteVariant::ALL
        .into_iter()
        .map(|variant| {
            check_primitive(
                &format!("sign_{variant}"),
                SignForward::Surrogate,
                |r| vec![random_tensor_avoiding(&[3, 4], 2.0, &[-1.0, 1.0], 1e-3, r)],
                &move |t, v| Ok(t.sign(v[0], variant)),
            )
        })
        .fold(0.0, f64::max)
}

pub fn abs() -> f64 {
    hard(
        "abs",
        |r| vec![random_tensor_avoiding(&[3, 4], 1.0, &[0.0], 1e-3, r)],
        &|t, v| Ok(t.abs(v[0])),
    )
}

pub fn filter_mean() -> f64 {
    hard(
        "filter_mean",
        |r| vec![random_tensor(&[3, 2, 2, 2], 1.0, r)],
        &|t, v| Ok(t.filter_mean(v[0])),
    )
}

pub fn channel_mean() -> f64 {
    hard(
        "channel_mean",
        |r| vec![random_tensor(&[2, 3, 2, 3], 1.0, r)],
        &|t, v| t.channel_mean(v[0]),
    )
}

pub fn scale_channels() -> f64 {
    hard(
        "scale_channels",
        |r| vec![random_tensor(&[2, 3, 2, 2], 1.0, r), random_tensor(&[3], 1.0, r)],
        &|t, v| t.scale_channels(v[0], v[1]),
    )
}

pub fn scale_spatial() -> f64 {
    hard(
        "scale_spatial",
        |r| {
            vec![
                random_tensor(&[2, 3, 2, 2], 1.0, r),
                random_tensor(&[2, 1, 2, 2], 1.0, r),
            ]
        },
        &|t, v| t.scale_spatial(v[0], v[1]),
    )
}

pub fn cross_entropy() -> f64 {
    hard("cross_entropy", |r| vec![random_tensor(&[4, 5], 3.0, r)], &|t, v| {
        t.cross_entropy(v[0], &[0, 4, 2, 2])
    })
}

pub fn weighted_sum() -> f64 {
    hard("weighted_sum", |r| vec![random_tensor(&[3, 4], 1.0, r)], &|t, v| {
        let w = DenseTensor::from_fn(&[3, 4], |i| i[0] as f64 - 0.5 * i[1] as f64);
        t.weighted_sum(v[0], w)
    })
}

/// `(2, 5, 5)` input, one 3×3 conv of `kind`, then a linear classifier.
fn single_conv_model(kind: KernelKind, seed: u64) -> Model {
    let spec = ModelSpec {
        name: "gradcheck".into(),
        input_shape: vec![2, 5, 5],
        classes: 3,
        layers: vec![
            LayerSpec::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel: [3, 3],
                stride: [1, 1],
                padding: [1, 1],
                kernel_kind: kind,
            },
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: 75,
                out_features: 3,
            },
        ],
    };
    Model::new(spec, seed).unwrap()
}

/// Relative errors of the input and parameter gradients of the mean
/// cross-entropy, with masks replayed and sign nodes evaluated as `sign`.
fn model_errors(
    model: &Model,
    x: &DenseTensor,
    labels: &[usize],
    mode: ForwardMode<'_>,
    sign: SignForward,
) -> (f64, f64) {
    let mut r = rng(0);
    let opts = ForwardOptions {
        sign,
        input_grad: true,
        param_grad: true,
    };
    let mut pass = model.forward(x, mode, &mut r, opts).unwrap();
    let (_, grads) = pass.backward(labels).unwrap();
    let loss_at = |m: &Model, x: &DenseTensor| {
        let opts = ForwardOptions {
            sign,
            input_grad: false,
            param_grad: false,
        };
        let mut pass = m.forward(x, mode, &mut rng(0), opts).unwrap();
        let loss = pass.tape.cross_entropy(pass.logits, labels).unwrap();
        pass.tape.value(loss).data()[0]
    };
    let input_numeric = numeric_gradient(
        |flat| loss_at(model, &DenseTensor::new(x.shape().to_vec(), flat.to_vec()).unwrap()),
        x.data(),
        STEP,
    );
    let input_err = relative_error(grads.input.as_ref().unwrap().data(), &input_numeric);
    let analytic: Vec<f64> = grads
        .params
        .iter()
        .flatten()
        .flat_map(|g| g.as_ref().unwrap().data().to_vec())
        .collect();
    let mut probe = model.clone();
    let param_numeric = numeric_gradient(
        |flat| {
            probe.set_flat_values(flat).unwrap();
            loss_at(&probe, x)
        },
        &model.flat_values(),
        STEP,
    );
    (input_err, relative_error(&analytic, &param_numeric))
}

pub fn tucker_dropout_layer_with_replayed_masks() -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for point in 0..POINTS {
        let model = single_conv_model(
            KernelKind::Tucker {
                ranks: vec![2, 2, 2, 2],
            },
            point as u64,
        )
        .with_dropout(0.7, point % 2 == 0)
        .unwrap();
        let masks = model.sample_masks(&mut r).unwrap();
        let x = random_tensor(&[2, 2, 5, 5], 1.0, &mut r);
        let labels = [r.random_range(0..3), r.random_range(0..3)];
        let (a, b) = model_errors(&model, &x, &labels, ForwardMode::Replay(&masks), SignForward::Hard);
        worst = worst.max(a).max(b);
    }
    worst
}

pub fn binary_layer_under_each_estimator() -> f64 {
    SteVariant::ALL.into_iter().map(binary_layer).fold(0.0, f64::max)
}

pub fn binary_layer(ste: SteVariant) -> f64 {
    let mut r = rng(23);
    let mut worst: f64 = 0.0;
    for point in 0..POINTS {
        let mut model = single_conv_model(KernelKind::Binary, point as u64).with_ste(ste);
        let kinks = [-1.0, 0.0, 1.0];
        for p in model.params_mut().take(1) {
            p.value = random_tensor_avoiding(p.value.shape(), 1.5, &kinks, 1e-3, &mut r);
        }
        let x = random_tensor_avoiding(&[2, 2, 5, 5], 1.5, &kinks, 1e-3, &mut r);
        let labels = [r.random_range(0..3), r.random_range(0..3)];
        let (a, b) = model_errors(&model, &x, &labels, ForwardMode::Deterministic, SignForward::Surrogate);
        worst = worst.max(a).max(b);
    }
    worst
}

/// Every check by name; each returns its worst relative error.
pub const CASES: &[(&str, fn() -> f64)] = &[
    ("add", add),
    ("add_bias", add_bias),
    ("mul_const", mul_const),
    ("mode_product_every_mode", mode_product_every_mode),
    ("conv2d_strided_padded", conv2d_strided_padded),
    ("relu", relu),
    ("max_pool", max_pool),
    ("reshape", reshape),
    ("linear", linear),
    ("sign_surrogates", sign_surrogates),
    ("abs", abs),
    ("filter_mean", filter_mean),
    ("channel_mean", channel_mean),
    ("scale_channels", scale_channels),
    ("scale_spatial", scale_spatial),
    ("cross_entropy", cross_entropy),
    ("weighted_sum", weighted_sum),
    (
        "tucker_dropout_layer_with_replayed_masks",
        tucker_dropout_layer_with_replayed_masks,
    ),
    ("binary_layer_under_each_estimator", binary_layer_under_each_estimator),
];

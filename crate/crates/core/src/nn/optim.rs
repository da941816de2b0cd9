//! SGD with momentum, weight decay and step learning-rate drops.

use serde::{Deserialize, Serialize};

use super::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `drop_factor`.
    pub drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    /// 0.1, dropped ×0.1 at epochs 150 and 250, momentum 0.9, decay 1e-6.
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            drop_epochs: vec![150, 250],
            drop_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.drop_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.drop_factor.powi(drops as i32)
    }
}

/// One update of every parameter from its accumulated gradient:
/// `v ← μ v + g + λ w`, `w ← w − η v`. Gradients are cleared afterwards.
pub fn sgd_step(model: &mut Model, config: &OptimizerConfig, epoch: usize) {
    let lr = config.lr_at(epoch);
    for p in model.params_mut() {
        let (w, g, v) = (p.value.data_mut(), p.grad.data(), p.momentum.data_mut());
        for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = config.momentum * *vi + gi + config.weight_decay * *wi;
            *wi -= lr * *vi;
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::build_model;

    #[test]
    fn schedule_drops() {
        let c = OptimizerConfig::default();
        assert_eq!(c.lr_at(0), 0.1);
        assert!((c.lr_at(150) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(300) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn momentum_update_by_hand() {
        let mut model = Model::new(build_model("small-cnn-2d").unwrap(), 0).unwrap();
        let cfg = OptimizerConfig {
            learning_rate: 0.5,
            drop_epochs: vec![],
            drop_factor: 1.0,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let w0 = model.params()[0][0].value.data()[0];
        for p in model.params_mut() {
            p.grad.data_mut().fill(1.0);
        }
        sgd_step(&mut model, &cfg, 0);
        let v1 = 1.0 + 0.01 * w0;
        let w1 = w0 - 0.5 * v1;
        assert!((model.params()[0][0].value.data()[0] - w1).abs() < 1e-15);
        assert_eq!(model.params()[0][0].grad.max_abs(), 0.0);
        for p in model.params_mut() {
            p.grad.data_mut().fill(1.0);
        }
        sgd_step(&mut model, &cfg, 0);
        let v2 = 0.9 * v1 + 1.0 + 0.01 * w1;
        assert!((model.params()[0][0].value.data()[0] - (w1 - 0.5 * v2)).abs() < 1e-15);
    }
}

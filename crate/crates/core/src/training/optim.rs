use etnet_tensor::{ParamGrads, Tensor};
use serde::{Deserialize, Serialize};

use crate::network::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    /// Add `weight_decay · p` to the gradient (L2) instead of decaying weights directly.
    pub coupled_weight_decay: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0005,
            epsilon: 1e-8,
            coupled_weight_decay: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |b: f64| b > 0.0 && b < 1.0;
        if !open(self.beta1) || !open(self.beta2) {
            return Err(Error::InvalidArgument(format!(
                "Adam betas ({}, {}) must lie in (0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(0.0..).contains(&self.weight_decay) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight_decay {} must be non-negative and epsilon {} positive",
                self.weight_decay, self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || (0..params.len()).map(|i| Tensor::zeros(params.value(i).shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update at learning rate `lr`. Parameters without a gradient are treated as having
    /// a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64, cfg: &OptimizerConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let wd = cfg.weight_decay;
        for id in 0..params.len() {
            let grad = grads.get(id).map(Tensor::data);
            let p = params.value_mut(id).data_mut();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            for i in 0..p.len() {
                let w = p[i] as f64;
                let mut g = grad.map_or(0.0, |g| g[i] as f64);
                if cfg.coupled_weight_decay {
                    g += wd * w;
                }
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let adam = (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
                let decay = if cfg.coupled_weight_decay { 0.0 } else { wd * w };
                p[i] = (w - lr * decay - lr * adam) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use etnet_tensor::{Graph, Shape};

    use super::*;

    fn store() -> ParamStore {
        ParamStore::new(vec![
            ("a".into(), Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, -2.0, 0.5]).unwrap()),
            ("b".into(), Tensor::full(Shape::new(1, 1, 1, 1), 4.0)),
        ])
        .unwrap()
    }

    fn no_grads() -> ParamGrads {
        Graph::new(true).backward(&[]).unwrap()
    }

    #[test]
    fn zero_gradient_step_is_pure_decoupled_decay() {
        let cfg = OptimizerConfig::default();
        let mut params = store();
        let before = params.clone();
        let mut adam = Adam::new(&params);
        let lr = 0.005;
        adam.update(&mut params, &no_grads(), lr, &cfg);
        for id in 0..params.len() {
            for (&new, &old) in params.value(id).data().iter().zip(before.value(id).data()) {
                let old = old as f64;
                assert_eq!(new, (old - lr * cfg.weight_decay * old) as f32);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut params = store();
        let before = params.clone();
        let mut g = Graph::new(true);
        let a = g.param(0, params.value(0));
        let grads = g.backward(&[(a, Tensor::full(Shape::new(1, 3, 1, 1), 1.0))]).unwrap();
        let mut adam = Adam::new(&params);
        adam.update(&mut params, &grads, 0.0, &OptimizerConfig::default());
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first Adam step is lr · sign(g) (up to epsilon).
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut params = store();
        let mut g = Graph::new(true);
        let a = g.param(0, params.value(0));
        let seed = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![3.0, -0.1, 0.0]).unwrap();
        let grads = g.backward(&[(a, seed)]).unwrap();
        let mut adam = Adam::new(&params);
        adam.update(&mut params, &grads, 0.01, &cfg);
        let d = params.value(0).data();
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] - -1.99).abs() < 1e-6);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn coupled_decay_enters_the_moments() {
        let cfg = OptimizerConfig {
            coupled_weight_decay: true,
            ..OptimizerConfig::default()
        };
        let mut params = store();
        let mut adam = Adam::new(&params);
        adam.update(&mut params, &no_grads(), 0.01, &cfg);
        // The L2 gradient wd·p is normalized away on the first step: p moves by lr · sign(p).
        assert!((params.value(1).data()[0] - 3.99).abs() < 1e-6);
        assert!(adam.m[1].data()[0] > 0.0);
    }

    #[test]
    fn validates_betas() {
        let bad = OptimizerConfig {
            beta2: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

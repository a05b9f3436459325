//! Optimizers: momentum SGD for network weights and a momentum-free
//! adaptive method (RMSprop with bias correction) for architecture logits.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            clip_norm: Some(5.0),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid SGD settings {self:?}")))
        }
    }
}

/// Momentum SGD over every trainable parameter that holds a gradient.
/// Momentum buffers are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: HashMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: HashMap::new(),
        })
    }

    /// Global L2 norm of all gradients held by `module`.
    pub fn grad_norm(module: &dyn Module) -> f64 {
        let mut sq = 0.0;
        module.visit(&mut |p| {
            if let (true, Some(g)) = (p.trainable(), p.value.grad()) {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, module: &mut dyn Module) {
        let cfg = self.config;
        let scale = match cfg.clip_norm {
            Some(max) => {
                let norm = Self::grad_norm(module);
                if norm > max {
                    max / (norm + 1e-6)
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let velocity = &mut self.velocity;
        module.visit_mut(&mut |p| {
            if !p.trainable() {
                return;
            }
            let Some(g) = p.value.grad().map(<[f64]>::to_vec) else {
                return;
            };
            let buf = velocity
                .entry(p.name().to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((w, v), g) in p.value.data_mut().iter_mut().zip(buf.iter_mut()).zip(g) {
                let d = g * scale + cfg.weight_decay * *w;
                *v = cfg.momentum * *v + d;
                *w -= cfg.lr * *v;
            }
            p.value.zero_grad();
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            decay: 0.999,
            eps: 1e-8,
        }
    }
}

/// Squared-gradient running averages for a list of vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub step: u64,
    pub sq_avg: Vec<Vec<f64>>,
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr >= 0.0 && self.lr.is_finite() && (0.0..1.0).contains(&self.decay) && self.eps > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("invalid RMSprop settings {self:?}")))
        }
    }

    /// `x -= lr * g / (sqrt(v / (1 - decay^t)) + eps)` with
    /// `v = decay * v + (1 - decay) * g^2`.
    pub fn step(&self, state: &mut RmsPropState, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Contract("gradient layout differs from parameters".into()));
        }
        if state.sq_avg.is_empty() {
            state.sq_avg = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        state.step += 1;
        let correction = 1.0 - self.decay.powi(state.step.min(i32::MAX as u64) as i32);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(state.sq_avg.iter_mut()) {
            for ((x, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.decay * *v + (1.0 - self.decay) * g * g;
                *x -= self.lr * g / ((*v / correction).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;
    use crate::tensor::Tensor;

    struct One(Param, Param);

    impl Module for One {
        fn visit(&self, f: &mut dyn FnMut(&Param)) {
            f(&self.0);
            f(&self.1);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
            f(&mut self.1);
        }
    }

    fn module() -> One {
        One(
            Param::new("w", Tensor::from_vec(vec![1.0, -2.0])),
            Param::buffer("b", Tensor::from_vec(vec![3.0])),
        )
    }

    #[test]
    fn sgd_hand_computed_steps() {
        let mut m = module();
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            clip_norm: None,
        })
        .unwrap();
        m.0.value.accumulate_grad(&[1.0, 1.0]);
        opt.step(&mut m);
        assert_eq!(m.0.value.data(), &[0.9, -2.1]);
        assert!(m.0.value.grad().is_none());
        m.0.value.accumulate_grad(&[1.0, 1.0]);
        opt.step(&mut m);
        // v = 0.5 * 1 + 1 = 1.5
        assert!((m.0.value.data()[0] - 0.75).abs() < 1e-15);
        assert_eq!(m.1.value.data(), &[3.0]);
    }

    #[test]
    fn clipping_bounds_the_update() {
        let mut m = module();
        let mut opt = Sgd::new(SgdConfig {
            lr: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: Some(1.0),
        })
        .unwrap();
        m.0.value.accumulate_grad(&[30.0, 40.0]);
        opt.step(&mut m);
        let moved = ((m.0.value.data()[0] - 1.0).powi(2) + (m.0.value.data()[1] + 2.0).powi(2)).sqrt();
        assert!((moved - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_leaves_weights() {
        let mut m = module();
        let mut opt = Sgd::new(SgdConfig {
            lr: 0.0,
            ..SgdConfig::default()
        })
        .unwrap();
        m.0.value.accumulate_grad(&[5.0, 7.0]);
        opt.step(&mut m);
        assert_eq!(m.0.value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn rmsprop_first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let cfg = RmsPropConfig::default();
        let mut state = RmsPropState::default();
        let mut p = vec![vec![0.0, 0.0]];
        cfg.step(&mut state, &mut p, &[vec![2.0, -0.5]]).unwrap();
        assert!((p[0][0] + 3e-4).abs() < 1e-10);
        assert!((p[0][1] - 3e-4).abs() < 1e-10);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn rmsprop_rejects_layout_mismatch() {
        let cfg = RmsPropConfig::default();
        let mut p = vec![vec![0.0; 2]];
        assert!(cfg.step(&mut RmsPropState::default(), &mut p, &[vec![1.0]]).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{Gradients, ParamStore};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Weight decay enters through the gradient (`g + wd * p`).
    Adam,
    /// Decoupled weight decay (`p -= lr * wd * p`).
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            ..Self::adam(lr, weight_decay)
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(NnError::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(NnError::Config("eps must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// Adam / AdamW state with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self, NnError> {
        config.validate()?;
        let zeros = |p: &ParamStore| {
            p.iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            config,
            step_count: 0,
            first_moment: zeros(params),
            second_moment: zeros(params),
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), NnError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, p) in params.iter_mut().enumerate() {
            let g = grads.get(id);
            if g.shape() != p.shape() {
                return Err(NnError::Shape(format!("gradient {id} has the wrong shape")));
            }
            let m = self.first_moment[id].data_mut();
            let v = self.second_moment[id].data_mut();
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let grad = match c.kind {
                    OptimizerKind::Adam => gv + c.weight_decay * *pv,
                    OptimizerKind::AdamW => {
                        *pv -= c.lr * c.weight_decay * *pv;
                        gv
                    }
                };
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * grad;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * grad * grad;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push(Matrix::scalar(v));
        s
    }

    fn grads(store: &ParamStore, g: f64) -> Gradients {
        let mut out = Gradients::zeros_like(store);
        out.accumulate(0, &Matrix::scalar(g)).unwrap();
        out
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        for kind in [OptimizerKind::Adam, OptimizerKind::AdamW] {
            let mut p = store(1.25);
            let cfg = OptimizerConfig {
                kind,
                ..OptimizerConfig::adam(0.1, 0.0)
            };
            let mut opt = Optimizer::new(cfg, &p).unwrap();
            let g = grads(&p, 0.0);
            for _ in 0..3 {
                opt.step(&mut p, &g).unwrap();
            }
            assert_eq!(p.get(0).item(), 1.25);
        }
    }

    #[test]
    fn first_adam_step_moves_by_the_learning_rate() {
        // m = 0.1, v = 0.1; bias correction with beta = 0.9 gives
        // mhat = vhat = 1, so the step is lr / (1 + eps).
        let mut p = store(0.0);
        let cfg = OptimizerConfig {
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
            ..OptimizerConfig::adam(0.1, 0.0)
        };
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        let g = grads(&p, 1.0);
        opt.step(&mut p, &g).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get(0).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut p = store(2.0);
        let mut opt = Optimizer::new(OptimizerConfig::adamw(1.0, 0.1), &p).unwrap();
        let g = grads(&p, 0.0);
        opt.step(&mut p, &g).unwrap();
        assert!((p.get(0).item() - 2.0 * 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_decay_flows_through_the_moments() {
        // With a zero gradient, coupled decay behaves like gradient wd * p,
        // so the first step is a full lr-sized move rather than a scaling.
        let mut p = store(2.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01, 0.1), &p).unwrap();
        let g = grads(&p, 0.0);
        opt.step(&mut p, &g).unwrap();
        assert!((p.get(0).item() - (2.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let p = store(0.0);
        assert!(Optimizer::new(OptimizerConfig::adam(0.0, 0.0), &p).is_err());
        let cfg = OptimizerConfig {
            beta2: 1.0,
            ..OptimizerConfig::adam(0.1, 0.0)
        };
        assert!(Optimizer::new(cfg, &p).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 0.001,
        }
    }
}

/// Optimizer hyperparameters plus per-tensor running statistics, in the
/// order of [`ModelParams::visit_trainable`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    /// Adam first moments.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m: Vec<Vec<f64>>,
    /// Adam second moments, or Adagrad's accumulated squared gradients.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.lr > 0.0 && config.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.lr
            )));
        }
        Ok(OptimizerState {
            kind: config.kind,
            lr: config.lr,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    fn check(&mut self, names: &[String], sizes: &[usize], grads: &[Tensor]) -> Result<()> {
        if grads.len() != names.len() {
            return Err(Error::contract(format!(
                "{} gradients for {} trainable tensors",
                grads.len(),
                names.len()
            )));
        }
        for ((name, &n), g) in names.iter().zip(sizes).zip(grads) {
            if g.len() != n {
                return Err(Error::contract(format!(
                    "gradient for {name} has {} entries, parameter has {n}",
                    g.len()
                )));
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient for {name}")));
            }
        }
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match self.kind {
            OptimizerKind::Adam if self.m.is_empty() => {
                self.m = zeros();
                self.v = zeros();
            }
            OptimizerKind::Adagrad if self.v.is_empty() => self.v = zeros(),
            _ => {}
        }
        let stored = if self.kind == OptimizerKind::Sgd {
            sizes.len()
        } else {
            self.v.len()
        };
        if stored != sizes.len() || self.v.iter().zip(sizes).any(|(v, &n)| v.len() != n) {
            return Err(Error::contract("optimizer state does not match the parameters"));
        }
        Ok(())
    }

    /// Applies one update, then re-establishes parameter constraints.
    /// Nothing is modified when a gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        let mut names = Vec::new();
        let mut sizes = Vec::new();
        params.visit_trainable(|n, d| {
            names.push(n);
            sizes.push(d.len());
        });
        self.check(&names, &sizes, grads)?;
        self.step += 1;
        let t = self.step as f64;
        let (lr, kind) = (self.lr, self.kind);
        let bc1 = 1.0 - BETA1.powf(t);
        let bc2 = 1.0 - BETA2.powf(t);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_trainable_mut(|_, p| {
            let g = grads[i].data();
            match kind {
                OptimizerKind::Sgd => {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adagrad => {
                    for ((p, g), acc) in p.iter_mut().zip(g).zip(v[i].iter_mut()) {
                        *acc += g * g;
                        *p -= lr * g / (acc.sqrt() + EPS);
                    }
                }
                OptimizerKind::Adam => {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m[i].iter_mut()).zip(v[i].iter_mut()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
                    }
                }
            }
            i += 1;
        });
        params.apply_constraints();
        Ok(())
    }
}

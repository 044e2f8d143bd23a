//! First-order optimizers over a [`ParamSet`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ParamSet;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const MOMENTUM: f64 = 0.9;
pub const RMSPROP_DECAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Momentum,
    Nesterov,
    RmsProp,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Nesterov => "nesterov",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum,
            "nesterov" => OptimizerKind::Nesterov,
            "rmsprop" => OptimizerKind::RmsProp,
            other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        })
    }
}

/// Per-parameter moment buffers and step counters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub kind: OptimizerKind,
    /// First moment (Adam) or velocity (momentum, Nesterov).
    pub m: Vec<Vec<f32>>,
    /// Second moment (Adam, RMSProp).
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    /// Running product of the β1 values used so far, for bias correction.
    pub beta1_power: f64,
    pub beta2_power: f64,
}

impl OptState {
    pub fn new(kind: OptimizerKind, params: &ParamSet<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.values().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self { kind, m: zeros.clone(), v: zeros, t: 0, lr: 3e-4, beta1: 0.9, beta1_power: 1.0, beta2_power: 1.0 }
    }

    /// Applies one update with the current `lr` and `beta1`. `names` label
    /// non-finite gradients in the error.
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (i, gr) in grads.iter().enumerate() {
            if gr.len() != params.get(i).numel() {
                return Err(Error::contract(format!("gradient of `{}` has {} values", params.names()[i], gr.len())));
            }
            if gr.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`", params.names()[i])));
            }
        }
        self.t += 1;
        self.beta1_power *= self.beta1;
        self.beta2_power *= ADAM_BETA2;
        let lr = self.lr;
        for (i, gr) in grads.iter().enumerate() {
            let p = params.get_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match self.kind {
                OptimizerKind::Adam => {
                    let b1 = self.beta1;
                    let c1 = 1.0 - self.beta1_power;
                    let c2 = 1.0 - self.beta2_power;
                    for j in 0..p.len() {
                        let g = gr[j] as f64;
                        let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                        let vj = ADAM_BETA2 * v[j] as f64 + (1.0 - ADAM_BETA2) * g * g;
                        m[j] = mj as f32;
                        v[j] = vj as f32;
                        p[j] = (p[j] as f64 - lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPSILON)) as f32;
                    }
                }
                OptimizerKind::Sgd => {
                    for j in 0..p.len() {
                        p[j] = (p[j] as f64 - lr * gr[j] as f64) as f32;
                    }
                }
                OptimizerKind::Momentum | OptimizerKind::Nesterov => {
                    let nesterov = self.kind == OptimizerKind::Nesterov;
                    for j in 0..p.len() {
                        let g = gr[j] as f64;
                        let vel = MOMENTUM * m[j] as f64 + g;
                        m[j] = vel as f32;
                        let dir = if nesterov { g + MOMENTUM * vel } else { vel };
                        p[j] = (p[j] as f64 - lr * dir) as f32;
                    }
                }
                OptimizerKind::RmsProp => {
                    for j in 0..p.len() {
                        let g = gr[j] as f64;
                        let vj = RMSPROP_DECAY * v[j] as f64 + (1.0 - RMSPROP_DECAY) * g * g;
                        v[j] = vj as f32;
                        p[j] = (p[j] as f64 - lr * g / (vj.sqrt() + ADAM_EPSILON)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}

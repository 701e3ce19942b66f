//! First-order optimizers and gradient clipping over any [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
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

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 2e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Momentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        match *self {
            OptimizerConfig::Momentum { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")))
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                Err(Error::Config("adam needs beta1, beta2 in [0, 1) and eps > 0".into()))
            }
            _ => Ok(()),
        }
    }

    fn slots(&self) -> usize {
        match self {
            OptimizerConfig::Sgd { .. } => 0,
            OptimizerConfig::Momentum { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        }
    }
}

/// Mutable optimizer state: step count plus per-slot, per-tensor buffers
/// laid out like the parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// `slots[s][t]` is slot `s` for parameter tensor `t`.
    pub slots: Vec<Vec<Vec<f64>>>,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, params: &impl ParamSet) -> Self {
        let layout: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
        OptimizerState {
            step: 0,
            slots: (0..cfg.slots())
                .map(|_| layout.iter().map(|&n| vec![0.0; n]).collect())
                .collect(),
        }
    }

    /// Slot names used in checkpoints.
    pub fn slot_names(cfg: &OptimizerConfig) -> &'static [&'static str] {
        match cfg {
            OptimizerConfig::Sgd { .. } => &[],
            OptimizerConfig::Momentum { .. } => &["velocity"],
            OptimizerConfig::Adam { .. } => &["m", "v"],
        }
    }

    /// Applies one update with learning rate `lr` (the configured rate after decay).
    pub fn apply<P: ParamSet>(&mut self, cfg: &OptimizerConfig, lr: f64, params: &mut P, grads: &P) {
        self.step += 1;
        let gs = grads.tensors();
        let ps = params.tensors_mut();
        assert_eq!(gs.len(), ps.len(), "parameter and gradient layouts differ");
        match *cfg {
            OptimizerConfig::Sgd { .. } => {
                for (p, g) in ps.into_iter().zip(&gs) {
                    for (w, d) in p.iter_mut().zip(g.data) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerConfig::Momentum { momentum, .. } => {
                for ((p, g), v) in ps.into_iter().zip(&gs).zip(&mut self.slots[0]) {
                    for ((w, d), v) in p.iter_mut().zip(g.data).zip(v.iter_mut()) {
                        *v = momentum * *v + d;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (ms, vs) = self.slots.split_at_mut(1);
                for (((p, g), m), v) in ps.into_iter().zip(&gs).zip(&mut ms[0]).zip(&mut vs[0]) {
                    for (((w, d), m), v) in p.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Gradient clipping policy.
///
/// In config files: `"auto"`, `"off"`, or a positive number (global norm).
/// `Auto` leaves LTM unclipped and clips the baselines at norm 5.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Clip {
    #[default]
    Auto,
    Off,
    Norm(f64),
}

pub const BASELINE_CLIP: f64 = 5.0;

impl Clip {
    pub fn resolve(self, cell: crate::cells::CellKind) -> Option<f64> {
        match self {
            Clip::Auto if cell == crate::cells::CellKind::Ltm => None,
            Clip::Auto => Some(BASELINE_CLIP),
            Clip::Off => None,
            Clip::Norm(n) => Some(n),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ClipRepr {
    Word(String),
    Norm(f64),
}

impl Serialize for Clip {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Clip::Auto => ClipRepr::Word("auto".into()),
            Clip::Off => ClipRepr::Word("off".into()),
            Clip::Norm(n) => ClipRepr::Norm(n),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Clip {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match ClipRepr::deserialize(d)? {
            ClipRepr::Word(w) if w == "auto" => Ok(Clip::Auto),
            ClipRepr::Word(w) if w == "off" => Ok(Clip::Off),
            ClipRepr::Word(w) => Err(D::Error::custom(format!("grad_clip must be \"auto\", \"off\" or a number, got {w:?}"))),
            ClipRepr::Norm(n) if n > 0.0 && n.is_finite() => Ok(Clip::Norm(n)),
            ClipRepr::Norm(n) => Err(D::Error::custom(format!("grad_clip norm must be positive, got {n}"))),
        }
    }
}

/// Rescales `grads` to norm `max` if larger. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut impl ParamSet, max: Option<f64>) -> f64 {
    let norm = grads.norm();
    if let Some(max) = max {
        if norm > max && norm.is_finite() {
            grads.scale_all(max / norm);
        }
    }
    norm
}
